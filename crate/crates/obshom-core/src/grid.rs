//! Uniform rectangular grids in dimension 1..=3, scalar fields on them,
//! discrete Laplacian stencils for Dirichlet and periodic boundary
//! conditions, and field utilities (norms, extrema, ball queries,
//! discrete gradients).
//!
//! Nodes are stored row-major (last axis fastest). Node `i = (i0,i1,i2)`
//! sits at physical coordinate `origin[a] + i[a] * spacing` per axis.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Boundary treatment of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    /// Axis-aligned box; face nodes carry Dirichlet data and are not updated.
    #[serde(rename = "dirichlet-box")]
    DirichletBox,
    /// Periodic torus; all stencils wrap, the physical period per axis is
    /// `shape[a] * spacing` and must be identical across axes.
    #[serde(rename = "periodic-torus")]
    PeriodicTorus,
}

/// A uniform rectangular grid. Unused trailing axes have shape 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    shape: [usize; 3],
    spacing: f64,
    origin: [f64; 3],
    topology: Topology,
}

impl Grid {
    pub fn new(
        dim: usize,
        shape: [usize; 3],
        spacing: f64,
        origin: [f64; 3],
        topology: Topology,
    ) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dim must be 1..=3, got {dim}")));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        for a in 0..3 {
            if a < dim {
                if shape[a] < 3 {
                    return Err(Error::InvalidGrid(format!(
                        "axis {a} has {} nodes, need at least 3",
                        shape[a]
                    )));
                }
            } else if shape[a] != 1 {
                return Err(Error::InvalidGrid(format!(
                    "unused axis {a} must have shape 1, got {}",
                    shape[a]
                )));
            }
            if !origin[a].is_finite() {
                return Err(Error::InvalidGrid("origin must be finite".into()));
            }
        }
        if topology == Topology::PeriodicTorus {
            for a in 1..dim {
                if shape[a] != shape[0] {
                    return Err(Error::InvalidGrid(
                        "periodic torus requires identical node counts per axis".into(),
                    ));
                }
            }
        }
        Ok(Grid { dim, shape, spacing, origin, topology })
    }

    /// Box grid with `cells[a]` subdivisions (so `cells[a] + 1` nodes) per axis.
    pub fn dirichlet_box(dim: usize, cells: [usize; 3], spacing: f64, origin: [f64; 3]) -> Result<Self> {
        let mut shape = [1usize; 3];
        for a in 0..dim {
            shape[a] = cells[a] + 1;
        }
        Grid::new(dim, shape, spacing, origin, Topology::DirichletBox)
    }

    /// Unit torus with `resolution` nodes per axis, spacing `1/resolution`,
    /// origin at 0.
    pub fn unit_torus(dim: usize, resolution: usize) -> Result<Self> {
        let mut shape = [1usize; 3];
        for a in 0..dim {
            shape[a] = resolution;
        }
        Grid::new(
            dim,
            shape,
            1.0 / resolution as f64,
            [0.0; 3],
            Topology::PeriodicTorus,
        )
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    #[inline]
    pub fn topology(&self) -> Topology {
        self.topology
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    #[inline]
    pub fn flat(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.shape[1] + idx[1]) * self.shape[2] + idx[2]
    }

    #[inline]
    pub fn unflat(&self, flat: usize) -> [usize; 3] {
        let i2 = flat % self.shape[2];
        let rest = flat / self.shape[2];
        let i1 = rest % self.shape[1];
        let i0 = rest / self.shape[1];
        [i0, i1, i2]
    }

    /// Physical coordinate of a node (length-3; trailing axes are `origin`).
    #[inline]
    pub fn coord(&self, idx: [usize; 3]) -> [f64; 3] {
        let mut x = self.origin;
        for a in 0..self.dim {
            x[a] += idx[a] as f64 * self.spacing;
        }
        x
    }

    /// True when the node lies on a box face (always false on the torus).
    #[inline]
    pub fn is_face(&self, idx: [usize; 3]) -> bool {
        if self.topology == Topology::PeriodicTorus {
            return false;
        }
        (0..self.dim).any(|a| idx[a] == 0 || idx[a] + 1 == self.shape[a])
    }

    /// Interior = not a face node. On the torus every node is interior.
    #[inline]
    pub fn is_interior(&self, idx: [usize; 3]) -> bool {
        !self.is_face(idx)
    }

    /// Flat index of the neighbor one step along `axis`, or `None` when the
    /// step leaves a Dirichlet box. Torus indices wrap.
    #[inline]
    pub fn neighbor(&self, idx: [usize; 3], axis: usize, step: isize) -> Option<usize> {
        let n = self.shape[axis];
        let i = idx[axis];
        let j = match self.topology {
            Topology::PeriodicTorus => {
                if step > 0 {
                    if i + 1 == n { 0 } else { i + 1 }
                } else if i == 0 {
                    n - 1
                } else {
                    i - 1
                }
            }
            Topology::DirichletBox => {
                if step > 0 {
                    if i + 1 >= n {
                        return None;
                    }
                    i + 1
                } else {
                    if i == 0 {
                        return None;
                    }
                    i - 1
                }
            }
        };
        let mut nb = idx;
        nb[axis] = j;
        Some(self.flat(nb))
    }

    /// Iterate all node index triples in row-major order.
    pub fn nodes(&self) -> impl Iterator<Item = [usize; 3]> {
        let [n0, n1, n2] = self.shape;
        (0..n0).flat_map(move |i0| {
            (0..n1).flat_map(move |i1| (0..n2).map(move |i2| [i0, i1, i2]))
        })
    }

    fn check_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{what}: grids differ")));
        }
        Ok(())
    }
}

/// Real values on every node of a grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn constant(grid: Grid, value: f64) -> Self {
        let n = grid.node_count();
        ScalarField { grid, values: vec![value; n] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "value count {} does not match node count {}",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    #[inline]
    pub fn at(&self, idx: [usize; 3]) -> f64 {
        self.values[self.grid.flat(idx)]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// One boolean flag per node; used for contact sets, free boundaries and
/// bulk lattice sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMask {
    pub grid: Grid,
    pub flags: Vec<bool>,
}

impl CellMask {
    pub fn empty(grid: Grid) -> Self {
        let n = grid.node_count();
        CellMask { grid, flags: vec![false; n] }
    }

    pub fn from_flags(grid: Grid, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "flag count {} does not match node count {}",
                flags.len(),
                grid.node_count()
            )));
        }
        Ok(CellMask { grid, flags })
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.flags.iter().any(|f| *f)
    }

    pub fn is_full(&self) -> bool {
        self.flags.iter().all(|f| *f)
    }

    /// Flat indices of set nodes.
    pub fn set_indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, f)| if *f { Some(i) } else { None })
            .collect()
    }
}

/// Node-wise evaluation of `fn` at physical coordinates.
pub fn sample<F>(f: F, grid: &Grid) -> Result<ScalarField>
where
    F: Fn(&[f64]) -> f64,
{
    let mut values = vec![0.0; grid.node_count()];
    for idx in grid.nodes() {
        let x = grid.coord(idx);
        let v = f(&x[..grid.dim()]);
        if !v.is_finite() {
            return Err(Error::Sampling { node: idx, value: v });
        }
        values[grid.flat(idx)] = v;
    }
    Ok(ScalarField { grid: *grid, values })
}

/// `(lap f)_i = h^-2 * sum_{neighbors j} (f_j - f_i)` with the 2n+1-point
/// stencil. Periodic topology wraps; on a Dirichlet box only interior nodes
/// are computed (face entries of the result are 0).
pub fn laplacian_apply(f: &ScalarField) -> ScalarField {
    let grid = f.grid;
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let mut out = vec![0.0; grid.node_count()];
    for idx in grid.nodes() {
        if grid.is_face(idx) {
            continue;
        }
        let c = f.values[grid.flat(idx)];
        let mut acc = 0.0;
        for a in 0..grid.dim() {
            // interior nodes always have both neighbors
            let lo = grid.neighbor(idx, a, -1).expect("interior node");
            let hi = grid.neighbor(idx, a, 1).expect("interior node");
            acc += (f.values[lo] - c) + (f.values[hi] - c);
        }
        out[grid.flat(idx)] = acc * inv_h2;
    }
    ScalarField { grid, values: out }
}

/// Discrete gradient: central differences in the interior (wrapping on the
/// torus), one-sided at Dirichlet box faces. Returns one field per axis.
pub fn gradient(f: &ScalarField) -> Vec<ScalarField> {
    let grid = f.grid;
    let h = grid.spacing();
    let mut comps = Vec::with_capacity(grid.dim());
    for a in 0..grid.dim() {
        let mut out = vec![0.0; grid.node_count()];
        for idx in grid.nodes() {
            let flat = grid.flat(idx);
            let lo = grid.neighbor(idx, a, -1);
            let hi = grid.neighbor(idx, a, 1);
            out[flat] = match (lo, hi) {
                (Some(l), Some(r)) => (f.values[r] - f.values[l]) / (2.0 * h),
                (None, Some(r)) => (f.values[r] - f.values[flat]) / h,
                (Some(l), None) => (f.values[flat] - f.values[l]) / h,
                (None, None) => 0.0,
            };
        }
        comps.push(ScalarField { grid, values: out });
    }
    comps
}

/// Which extremum [`ball_extremum`] computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Sup,
    Inf,
}

/// Extremum of `f` over nodes whose physical distance to `center` is at most
/// `radius`. Torus distances use the minimal image. Errors when no node lies
/// in the ball.
pub fn ball_extremum(f: &ScalarField, center: &[f64], radius: f64, mode: Extremum) -> Result<f64> {
    let grid = f.grid;
    if center.len() != grid.dim() {
        return Err(Error::Domain(format!(
            "center has {} coordinates, grid dim is {}",
            center.len(),
            grid.dim()
        )));
    }
    if !(radius >= 0.0) {
        return Err(Error::Domain(format!("radius must be nonnegative, got {radius}")));
    }
    let h = grid.spacing();
    let shape = grid.shape();
    let origin = grid.origin();
    let periodic = grid.topology() == Topology::PeriodicTorus;

    // Per-axis index windows covering the ball.
    let mut lo = [0isize; 3];
    let mut hi = [0isize; 3];
    for a in 0..grid.dim() {
        let c = (center[a] - origin[a]) / h;
        let (l, u) = (((c - radius / h).ceil()) as isize, ((c + radius / h).floor()) as isize);
        if periodic {
            let n = shape[a] as isize;
            if u - l + 1 >= n {
                lo[a] = 0;
                hi[a] = n - 1;
            } else {
                lo[a] = l;
                hi[a] = u;
            }
        } else {
            lo[a] = l.max(0);
            hi[a] = u.min(shape[a] as isize - 1);
            if lo[a] > hi[a] {
                return Err(Error::EmptyRegion(
                    "ball does not intersect the grid box".into(),
                ));
            }
        }
    }

    let period = shape[0] as f64 * h;
    let r2 = radius * radius;
    let mut best: Option<f64> = None;
    let mut visit = |idx: [usize; 3]| {
        let x = grid.coord(idx);
        let mut d2 = 0.0;
        for a in 0..grid.dim() {
            let mut d = x[a] - center[a];
            if periodic {
                d -= (d / period).round() * period;
            }
            d2 += d * d;
        }
        if d2 <= r2 * (1.0 + 1e-14) {
            let v = f.values[grid.flat(idx)];
            best = Some(match (best, mode) {
                (None, _) => v,
                (Some(b), Extremum::Sup) => b.max(v),
                (Some(b), Extremum::Inf) => b.min(v),
            });
        }
    };

    let wrap = |k: isize, n: usize| -> usize { k.rem_euclid(n as isize) as usize };
    for k0 in lo[0]..=hi[0] {
        let i0 = wrap(k0, shape[0]);
        if grid.dim() == 1 {
            visit([i0, 0, 0]);
            continue;
        }
        for k1 in lo[1]..=hi[1] {
            let i1 = wrap(k1, shape[1]);
            if grid.dim() == 2 {
                visit([i0, i1, 0]);
                continue;
            }
            for k2 in lo[2]..=hi[2] {
                visit([i0, i1, wrap(k2, shape[2])]);
            }
        }
    }

    best.ok_or_else(|| Error::EmptyRegion("no grid node inside the ball".into()))
}

/// Max over interior nodes and axes of |f(i+e) - 2 f(i) + f(i-e)| / h^2,
/// an estimate of sup |D^2 f| used for discretization slacks.
pub fn max_second_difference(f: &ScalarField) -> f64 {
    let grid = f.grid;
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let mut m = 0.0f64;
    for idx in grid.nodes() {
        if grid.is_face(idx) {
            continue;
        }
        let c = f.values[grid.flat(idx)];
        for a in 0..grid.dim() {
            let lo = grid.neighbor(idx, a, -1).expect("interior node");
            let hi = grid.neighbor(idx, a, 1).expect("interior node");
            m = m.max(((f.values[lo] - c) + (f.values[hi] - c)).abs() * inv_h2);
        }
    }
    m
}

/// Periodically extend a unit-cell field to `target` as `cell(x / eps)`.
///
/// Exactness contract: `eps / h` must be an integer `m`, the cell resolution
/// `R` a multiple of `m`, and the target origin an integer multiple of `eps`
/// per axis. Values are then copied by index arithmetic, so the extension is
/// bit-exact periodic in the grid data.
pub fn extend_periodic(cell: &ScalarField, target: &Grid, eps: f64) -> Result<ScalarField> {
    if cell.grid.topology() != Topology::PeriodicTorus {
        return Err(Error::InvalidGrid("cell field must live on a torus".into()));
    }
    if cell.grid.dim() != target.dim() {
        return Err(Error::GridMismatch("cell and target dimensions differ".into()));
    }
    let h = target.spacing();
    let m_f = eps / h;
    let m = m_f.round() as usize;
    if m == 0 || (m_f - m as f64).abs() > 1e-9 * m_f.abs().max(1.0) {
        return Err(Error::Resolution(format!(
            "eps/h = {m_f} is not an integer; the extension would not be exactly periodic"
        )));
    }
    let r = cell.grid.shape()[0];
    if r % m != 0 {
        return Err(Error::Resolution(format!(
            "cell resolution {r} is not a multiple of eps/h = {m}"
        )));
    }
    let stride = r / m;
    let mut phase = [0usize; 3];
    for a in 0..target.dim() {
        // The origin must sit on the eps/m sub-lattice for node positions to
        // land exactly on cell nodes.
        let s = target.origin()[a] / eps * m as f64;
        let s_round = s.round();
        if (s - s_round).abs() > 1e-9 {
            return Err(Error::Resolution(format!(
                "target origin along axis {a} is not aligned with the eps/{m} lattice"
            )));
        }
        phase[a] = (s_round as i64).rem_euclid(m as i64) as usize;
    }
    let mut values = vec![0.0; target.node_count()];
    for idx in target.nodes() {
        let mut cidx = [0usize; 3];
        for a in 0..target.dim() {
            cidx[a] = ((idx[a] + phase[a]) % m) * stride;
        }
        values[target.flat(idx)] = cell.values[cell.grid.flat(cidx)];
    }
    Ok(ScalarField { grid: *target, values })
}

pub(crate) fn require_same_grid(a: &Grid, b: &Grid, what: &str) -> Result<()> {
    a.check_same(b, what)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus_1d(n: usize) -> Grid {
        Grid::unit_torus(1, n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(1, [2, 1, 1], 0.1, [0.0; 3], Topology::DirichletBox).is_err());
        assert!(Grid::new(2, [8, 4, 1], 0.1, [0.0; 3], Topology::PeriodicTorus).is_err());
        assert!(Grid::new(1, [8, 1, 1], -0.1, [0.0; 3], Topology::DirichletBox).is_err());
        assert!(Grid::new(4, [8, 8, 8], 0.1, [0.0; 3], Topology::DirichletBox).is_err());
        assert!(Grid::new(2, [8, 8, 2], 0.1, [0.0; 3], Topology::DirichletBox).is_err());
    }

    #[test]
    fn laplacian_of_constant_on_torus_is_zero() {
        let g = Grid::unit_torus(2, 8).unwrap();
        let f = ScalarField::constant(g, 3.25);
        let lap = laplacian_apply(&f);
        assert!(lap.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn laplacian_of_quadratic_is_exact() {
        // Dyadic grid keeps x^2 and its second differences exact in f64.
        let g = Grid::dirichlet_box(1, [64, 0, 0], 1.0 / 32.0, [-1.0, 0.0, 0.0]).unwrap();
        let f = sample(|x| x[0] * x[0], &g).unwrap();
        let lap = laplacian_apply(&f);
        for idx in g.nodes() {
            if g.is_interior(idx) {
                assert_eq!(lap.at(idx), 2.0, "node {idx:?}");
            } else {
                assert_eq!(lap.at(idx), 0.0);
            }
        }
    }

    #[test]
    fn laplacian_periodic_eigenfunction() {
        // lap_h sin(2 pi x) = -(2/h^2)(1 - cos(2 pi h)) sin(2 pi x), node-wise.
        let n = 64;
        let g = torus_1d(n);
        let h = g.spacing();
        let f = sample(|x| (2.0 * std::f64::consts::PI * x[0]).sin(), &g).unwrap();
        let lap = laplacian_apply(&f);
        let lam = -(2.0 / (h * h)) * (1.0 - (2.0 * std::f64::consts::PI * h).cos());
        let scale = lam.abs() * f.max_abs();
        for i in 0..n {
            let want = lam * f.values[i];
            assert!(
                (lap.values[i] - want).abs() <= 1e-12 * scale,
                "node {i}: {} vs {}",
                lap.values[i],
                want
            );
        }
    }

    #[test]
    fn sample_reports_bad_node() {
        let g = torus_1d(8);
        let err = sample(|x| if x[0] > 0.4 { f64::NAN } else { 0.0 }, &g).unwrap_err();
        match err {
            Error::Sampling { node, .. } => assert!(node[0] >= 4),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn sample_linear_values() {
        let g = Grid::dirichlet_box(1, [2, 0, 0], 0.5, [0.0; 3]).unwrap();
        let f = sample(|x| x[0], &g).unwrap();
        assert_eq!(f.values, vec![0.0, 0.5, 1.0]);
        let z = sample(|_| 0.0, &g).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sampled_oscillation_has_exact_period() {
        // psi(x/eps) with eps/h = 16 repeats every 16 nodes.
        let eps = 1.0 / 8.0;
        let h = 1.0 / 128.0;
        let g = Grid::dirichlet_box(1, [256, 0, 0], h, [-1.0, 0.0, 0.0]).unwrap();
        let f = sample(
            |x| -(std::f64::consts::PI * x[0] / eps).sin().powi(2),
            &g,
        )
        .unwrap();
        let m = (eps / h) as usize;
        assert_eq!(m, 16);
        for i in 0..(g.node_count() - m) {
            assert!(
                (f.values[i] - f.values[i + m]).abs() <= 1e-12,
                "period mismatch at {i}"
            );
        }
    }

    #[test]
    fn ball_extremum_basics() {
        let g = Grid::dirichlet_box(1, [200, 0, 0], 0.01, [-1.0, 0.0, 0.0]).unwrap();
        let c = sample(|_| 5.0, &g).unwrap();
        assert_eq!(ball_extremum(&c, &[0.3], 0.05, Extremum::Sup).unwrap(), 5.0);

        // f(x) = x on (-1, 1): inf over B_0.5(0) is -0.5 up to h.
        let f = sample(|x| x[0], &g).unwrap();
        let inf = ball_extremum(&f, &[0.0], 0.5, Extremum::Inf).unwrap();
        assert!((inf + 0.5).abs() <= g.spacing() + 1e-12);

        // sup over B_r(0) of |x|^2 is r^2 up to grid quantization.
        let q = sample(|x| x[0] * x[0], &g).unwrap();
        let r = 0.25;
        let sup = ball_extremum(&q, &[0.0], r, Extremum::Sup).unwrap();
        assert!((sup - r * r).abs() <= 2.0 * g.spacing() * r + 1e-12);

        // Ball fully outside the box.
        assert!(matches!(
            ball_extremum(&f, &[5.0], 0.1, Extremum::Sup),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn ball_extremum_wraps_on_torus() {
        let g = torus_1d(16);
        let f = sample(|x| (x[0] - 0.5).abs(), &g).unwrap();
        // Ball around 0 wraps across the seam; inf there is at distance ~0.5
        // from the field's minimum but the sup picks up the wrapped values.
        let sup = ball_extremum(&f, &[0.0], 0.2, Extremum::Sup).unwrap();
        assert!((sup - 0.5).abs() <= g.spacing() + 1e-12);
    }

    #[test]
    fn gradient_constant_and_linear() {
        let g = Grid::dirichlet_box(2, [16, 16, 0], 0.125, [-1.0, -1.0, 0.0]).unwrap();
        let c = sample(|_| 7.0, &g).unwrap();
        for comp in gradient(&c) {
            assert!(comp.values.iter().all(|v| *v == 0.0));
        }
        let f = sample(|x| 3.0 * x[0], &g).unwrap();
        let gx = &gradient(&f)[0];
        for idx in g.nodes() {
            assert!((gx.at(idx) - 3.0).abs() <= 1e-12, "node {idx:?}");
        }
    }

    #[test]
    fn gradient_second_order_on_torus() {
        // Central difference of sin(2 pi x) equals 2 pi cos(2 pi x) sinc(2 pi h);
        // the Taylor bound gives max error <= (4 pi^3 / 3) h^2 < 42 h^2.
        let g = torus_1d(128);
        let h = g.spacing();
        let two_pi = 2.0 * std::f64::consts::PI;
        let f = sample(|x| (two_pi * x[0]).sin(), &g).unwrap();
        let gx = &gradient(&f)[0];
        let mut worst = 0.0f64;
        for idx in g.nodes() {
            let x = g.coord(idx)[0];
            worst = worst.max((gx.at(idx) - two_pi * (two_pi * x).cos()).abs());
        }
        assert!(worst <= 42.0 * h * h, "worst {worst} vs {}", 42.0 * h * h);
    }

    #[test]
    fn extend_periodic_round_trips_cell_values() {
        let cell = {
            let g = Grid::unit_torus(1, 64).unwrap();
            sample(|x| -(std::f64::consts::PI * x[0]).sin().powi(2), &g).unwrap()
        };
        let eps = 0.25;
        let h = eps / 16.0;
        let target = Grid::dirichlet_box(1, [128, 0, 0], h, [-1.0, 0.0, 0.0]).unwrap();
        let ext = extend_periodic(&cell, &target, eps).unwrap();
        // Period eps/h = 16 nodes, bit-exact by construction.
        for i in 0..(target.node_count() - 16) {
            assert_eq!(ext.values[i], ext.values[i + 16]);
        }
        // Node 0 sits at x = -1 = -4 eps, an integer multiple, so it maps to
        // cell node 0.
        assert_eq!(ext.values[0], cell.values[0]);

        // Non-integer eps/h is rejected.
        assert!(extend_periodic(&cell, &target, 0.3).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_field(n: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-10.0f64..10.0, n * n)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            // Summation by parts on the torus:
            //   sum_i f_i (lap g)_i h^n = -sum_edges D+f D+g h^n
            #[test]
            fn integration_by_parts(fv in arb_field(12), gv in arb_field(12)) {
                let g = Grid::unit_torus(2, 12).unwrap();
                let f = ScalarField::from_values(g, fv).unwrap();
                let gg = ScalarField::from_values(g, gv).unwrap();
                let h = g.spacing();
                let hn = h * h;
                let lap = laplacian_apply(&gg);
                let lhs: f64 = f
                    .values
                    .iter()
                    .zip(&lap.values)
                    .map(|(a, b)| a * b * hn)
                    .sum();
                let mut rhs = 0.0;
                let mut mass = 0.0;
                for idx in g.nodes() {
                    let fi = f.values[g.flat(idx)];
                    let gi = gg.values[g.flat(idx)];
                    for a in 0..2 {
                        let j = g.neighbor(idx, a, 1).unwrap();
                        let t = (f.values[j] - fi) * (gg.values[j] - gi) * hn / (h * h);
                        rhs -= t;
                        mass += t.abs();
                    }
                }
                let tol = 1e-12 * (mass + lhs.abs() + 1.0);
                prop_assert!((lhs - rhs).abs() <= tol, "lhs {lhs} rhs {rhs}");
            }

            // sum_i (lap f)_i = 0 on the torus (to roundoff).
            #[test]
            fn laplacian_sums_to_zero(fv in arb_field(12)) {
                let g = Grid::unit_torus(2, 12).unwrap();
                let f = ScalarField::from_values(g, fv).unwrap();
                let lap = laplacian_apply(&f);
                let total: f64 = lap.values.iter().sum();
                let mass: f64 = lap.values.iter().map(|v| v.abs()).sum();
                prop_assert!(total.abs() <= 1e-12 * (mass + 1.0));
            }

            // Linearity of the stencil.
            #[test]
            fn laplacian_is_linear(
                fv in arb_field(8),
                gv in arb_field(8),
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
            ) {
                let g = Grid::unit_torus(2, 8).unwrap();
                let f = ScalarField::from_values(g, fv).unwrap();
                let gg = ScalarField::from_values(g, gv).unwrap();
                let combo = ScalarField::from_values(
                    g,
                    f.values.iter().zip(&gg.values).map(|(x, y)| a * x + b * y).collect(),
                ).unwrap();
                let lap_combo = laplacian_apply(&combo);
                let lap_f = laplacian_apply(&f);
                let lap_g = laplacian_apply(&gg);
                for i in 0..combo.values.len() {
                    let want = a * lap_f.values[i] + b * lap_g.values[i];
                    let scale = want.abs().max(lap_combo.values[i].abs()).max(1.0);
                    prop_assert!((lap_combo.values[i] - want).abs() <= 1e-11 * scale);
                }
            }
        }
    }
}
