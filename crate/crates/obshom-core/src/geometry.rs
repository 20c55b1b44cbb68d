//! Contact-set geometry: free boundaries, the bulk contact set built on a
//! lattice of side `4 (lambda^-1 2n)^(1/2) r(eps)`, exact Euclidean distance
//! transforms, Hausdorff distances between node sets, and non-degeneracy
//! probes of the height function.

use crate::error::{Error, Result};
use crate::grid::{
    ball_extremum, max_second_difference, require_same_grid, CellMask, Extremum, Grid,
    ScalarField, Topology,
};
use log::warn;
use std::collections::HashSet;

/// Nodes of `mask` with at least one face-neighbor outside `mask`,
/// restricted to interior nodes. Errors on empty or full masks.
pub fn free_boundary(mask: &CellMask) -> Result<CellMask> {
    if mask.is_empty() {
        return Err(Error::DegenerateSet("free boundary of an empty mask".into()));
    }
    if mask.is_full() {
        return Err(Error::DegenerateSet("free boundary of an all-true mask".into()));
    }
    let grid = mask.grid;
    let mut flags = vec![false; grid.node_count()];
    for idx in grid.nodes() {
        let flat = grid.flat(idx);
        if !mask.flags[flat] || !grid.is_interior(idx) {
            continue;
        }
        'dirs: for a in 0..grid.dim() {
            for step in [-1isize, 1] {
                match grid.neighbor(idx, a, step) {
                    Some(j) if !mask.flags[j] => {
                        flags[flat] = true;
                        break 'dirs;
                    }
                    _ => {}
                }
            }
        }
    }
    CellMask::from_flags(grid, flags)
}

/// The lattice of cubes underlying the bulk contact set.
#[derive(Debug, Clone)]
pub struct BulkLattice {
    /// Physical cube side `4 (lambda^-1 2n)^(1/2) r_eps`.
    pub cube_side: f64,
    pub anchor: [f64; 3],
    /// Per-node lattice cube index (trailing axes 0).
    pub cube_index_map: Vec<[i32; 3]>,
}

/// Cube side of the bulk lattice for the given dimension and lambda.
pub fn bulk_cube_side(dim: usize, lambda: f64, r_eps: f64) -> f64 {
    4.0 * (2.0 * dim as f64 / lambda).sqrt() * r_eps
}

/// Mark every node whose lattice cube contains at least one contact node.
/// The anchor defaults to the grid origin. The result always contains the
/// contact set.
pub fn bulk_contact_set(
    contact: &CellMask,
    r_eps: f64,
    lambda: f64,
    anchor: Option<[f64; 3]>,
) -> Result<(CellMask, BulkLattice)> {
    if !(r_eps > 0.0) {
        return Err(Error::Domain(format!("r_eps must be positive, got {r_eps}")));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Domain(format!("lambda must lie in (0,1], got {lambda}")));
    }
    let grid = contact.grid;
    let side = bulk_cube_side(grid.dim(), lambda, r_eps);
    if side < 2.0 * grid.spacing() {
        return Err(Error::Resolution(format!(
            "lattice cube side {side:.3e} is below 2h = {:.3e}",
            2.0 * grid.spacing()
        )));
    }
    let anchor = anchor.unwrap_or(grid.origin());

    let mut map = vec![[0i32; 3]; grid.node_count()];
    for idx in grid.nodes() {
        let x = grid.coord(idx);
        let mut cube = [0i32; 3];
        for a in 0..grid.dim() {
            cube[a] = ((x[a] - anchor[a]) / side).floor() as i32;
        }
        map[grid.flat(idx)] = cube;
    }

    let marked: HashSet<[i32; 3]> = contact
        .set_indices()
        .into_iter()
        .map(|flat| map[flat])
        .collect();
    let flags: Vec<bool> = map.iter().map(|cube| marked.contains(cube)).collect();
    let mask = CellMask::from_flags(grid, flags)?;
    Ok((mask, BulkLattice { cube_side: side, anchor, cube_index_map: map }))
}

/// The bulk free boundary: boundary nodes of the bulk contact set inside U.
pub fn bulk_free_boundary(bulk: &CellMask) -> Result<CellMask> {
    free_boundary(bulk)
}

/// Per-node Euclidean distance to a node set.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub grid: Grid,
    pub dist: Vec<f64>,
}

const DT_INF: f64 = 1e20;

/// One separable pass of the exact squared-distance transform
/// (lower envelope of parabolas).
fn dt_line(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        loop {
            let p = v[k];
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    // q dominates everywhere so far
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out[q] = d * d + f[p];
    }
}

/// Exact Euclidean distance transform of a node set, in physical units.
/// Torus axes wrap (minimal-image distances) via line triplication.
pub fn distance_transform(set: &CellMask) -> Result<DistanceField> {
    if set.is_empty() {
        return Err(Error::EmptyRegion("distance transform of an empty set".into()));
    }
    let grid = set.grid;
    let periodic = grid.topology() == Topology::PeriodicTorus;
    let [n0, n1, n2] = grid.shape();
    let mut d2: Vec<f64> = set
        .flags
        .iter()
        .map(|f| if *f { 0.0 } else { DT_INF })
        .collect();

    let mut line = Vec::new();
    let mut out_line = Vec::new();
    for axis in 0..grid.dim() {
        let n = grid.shape()[axis];
        // Iterate all lines along `axis`.
        let (a, b) = match axis {
            0 => (n1, n2),
            1 => (n0, n2),
            _ => (n0, n1),
        };
        for i in 0..a {
            for j in 0..b {
                line.clear();
                for k in 0..n {
                    let idx = match axis {
                        0 => [k, i, j],
                        1 => [i, k, j],
                        _ => [i, j, k],
                    };
                    line.push(d2[grid.flat(idx)]);
                }
                if periodic {
                    // Triplicate and keep the middle block: minimal-image
                    // distances within one period.
                    let mut tri = Vec::with_capacity(3 * n);
                    tri.extend_from_slice(&line);
                    tri.extend_from_slice(&line);
                    tri.extend_from_slice(&line);
                    out_line.resize(3 * n, 0.0);
                    dt_line(&tri, &mut out_line);
                    for k in 0..n {
                        let idx = match axis {
                            0 => [k, i, j],
                            1 => [i, k, j],
                            _ => [i, j, k],
                        };
                        d2[grid.flat(idx)] = out_line[n + k];
                    }
                } else {
                    out_line.resize(n, 0.0);
                    dt_line(&line, &mut out_line);
                    for k in 0..n {
                        let idx = match axis {
                            0 => [k, i, j],
                            1 => [i, k, j],
                            _ => [i, j, k],
                        };
                        d2[grid.flat(idx)] = out_line[k];
                    }
                }
            }
        }
    }

    let h = grid.spacing();
    let dist = d2.into_iter().map(|v| v.sqrt() * h).collect();
    Ok(DistanceField { grid, dist })
}

/// Hausdorff distance between two node sets on the same grid, via exact
/// distance transforms.
pub fn hausdorff_distance(a: &CellMask, b: &CellMask) -> Result<f64> {
    require_same_grid(&a.grid, &b.grid, "hausdorff")?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateSet("Hausdorff distance needs nonempty sets".into()));
    }
    let da = distance_transform(a)?;
    let db = distance_transform(b)?;
    let mut worst = 0.0f64;
    for flat in a.set_indices() {
        worst = worst.max(db.dist[flat]);
    }
    for flat in b.set_indices() {
        worst = worst.max(da.dist[flat]);
    }
    Ok(worst)
}

/// One probe evaluation of the quadratic-growth inequality.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ProbeEntry {
    pub center: [f64; 3],
    pub r: f64,
    /// sup of w over the ball.
    pub lhs: f64,
    /// The quadratic lower bound the inequality demands.
    pub rhs: f64,
    /// lhs - rhs + slack; negative means a violation beyond slack.
    pub margin: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ProbeReport {
    pub entries: Vec<ProbeEntry>,
    pub violations: usize,
    pub worst_margin: f64,
    /// Slack coefficient used: slack = c_d * h * r.
    pub c_d: f64,
    /// True when no admissible center existed.
    pub empty: bool,
}

impl ProbeReport {
    fn from_entries(entries: Vec<ProbeEntry>, c_d: f64) -> Self {
        let violations = entries.iter().filter(|e| e.margin < 0.0).count();
        let worst_margin = entries
            .iter()
            .map(|e| e.margin)
            .fold(f64::INFINITY, f64::min);
        let empty = entries.is_empty();
        ProbeReport { entries, violations, worst_margin: if empty { 0.0 } else { worst_margin }, c_d, empty }
    }
}

/// Probe `sup_{B_r(z)} w >= (lambda/2n) r^2 - r_eps^2` at sampled centers z
/// with `dist(z, contact) > (lambda^-1 2n)^(1/2) r_eps` and `B_r(z)` inside
/// the box, with additive slack `c_d h r` where `c_d` is 4x the measured
/// second-difference bound of w.
pub fn nondegeneracy_probe(
    w: &ScalarField,
    contact: &CellMask,
    r_eps: f64,
    lambda: f64,
    radii: &[f64],
    target_points: usize,
) -> Result<ProbeReport> {
    require_same_grid(&w.grid, &contact.grid, "probe")?;
    if radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Domain("probe radii must be positive".into()));
    }
    let grid = w.grid;
    let n = grid.dim() as f64;
    let threshold = (2.0 * n / lambda).sqrt() * r_eps;
    let dt = distance_transform(contact)?;
    let c_d = 4.0 * max_second_difference(w);
    let h = grid.spacing();

    let admissible: Vec<[usize; 3]> = grid
        .nodes()
        .filter(|idx| grid.is_interior(*idx) && dt.dist[grid.flat(*idx)] > threshold)
        .collect();
    let stride = ((admissible.len() * radii.len()) / target_points.max(1)).max(1);
    let mut entries = Vec::new();
    for (k, idx) in admissible.iter().enumerate() {
        if k % stride != 0 {
            continue;
        }
        let x = grid.coord(*idx);
        for &r in radii {
            if !ball_inside_box(&grid, &x, r) {
                continue;
            }
            let lhs = ball_extremum(w, &x[..grid.dim()], r, Extremum::Sup)?;
            let rhs = lambda / (2.0 * n) * r * r - r_eps * r_eps;
            entries.push(ProbeEntry {
                center: x,
                r,
                lhs,
                rhs,
                margin: lhs - rhs + c_d * h * r,
            });
        }
    }
    if entries.is_empty() {
        warn!("non-degeneracy probe found no admissible (center, radius) pair");
    }
    Ok(ProbeReport::from_entries(entries, c_d))
}

/// True when the closed ball of radius `r` around `x` stays inside the box.
pub fn ball_inside_box(grid: &Grid, x: &[f64; 3], r: f64) -> bool {
    if grid.topology() == Topology::PeriodicTorus {
        // Balls always fit on the torus up to half the period.
        return r <= grid.shape()[0] as f64 * grid.spacing() / 2.0;
    }
    for a in 0..grid.dim() {
        let lo = grid.origin()[a];
        let hi = lo + (grid.shape()[a] - 1) as f64 * grid.spacing();
        if x[a] - r <= lo || x[a] + r >= hi {
            return false;
        }
    }
    true
}

/// Empirical surrogates for the regularity constants of the background
/// height function.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RegularityEstimates {
    /// Max second-difference quotient (a C^{1,1} bound surrogate).
    pub m: f64,
    /// min over non-contact nodes (d >= 4h from the free boundary) of
    /// w0 / d(x, Gamma0)^2.
    pub c1: f64,
    /// Largest interior-ball fraction of the contact set, capped at 1/2.
    pub c2: f64,
}

/// Measure {M, c1, c2} from a solved background height function and its
/// contact set. The contact set must span at least 16 nodes per axis.
pub fn regularity_estimates(w0: &ScalarField, contact0: &CellMask) -> Result<RegularityEstimates> {
    require_same_grid(&w0.grid, &contact0.grid, "regularity")?;
    let grid = w0.grid;
    let h = grid.spacing();

    if contact0.is_empty() {
        return Err(Error::Resolution("contact set is empty".into()));
    }
    // Degenerate full-contact case: w0 = 0 everywhere it matters.
    if contact0.set_indices().len() + face_count(&grid) >= grid.node_count() {
        return Ok(RegularityEstimates { m: max_second_difference(w0), c1: f64::INFINITY, c2: 0.5 });
    }

    // Bounding box of the contact set, in nodes.
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for flat in contact0.set_indices() {
        let idx = grid.unflat(flat);
        for a in 0..grid.dim() {
            lo[a] = lo[a].min(idx[a]);
            hi[a] = hi[a].max(idx[a]);
        }
    }
    for a in 0..grid.dim() {
        if hi[a] - lo[a] + 1 < 16 {
            return Err(Error::Resolution(format!(
                "contact set spans only {} nodes along axis {a}; need at least 16",
                hi[a] - lo[a] + 1
            )));
        }
    }

    let m = max_second_difference(w0);

    let gamma0 = free_boundary(contact0)?;
    let dt_fb = distance_transform(&gamma0)?;
    let mut c1 = f64::INFINITY;
    for idx in grid.nodes() {
        let flat = grid.flat(idx);
        if !grid.is_interior(idx) || contact0.flags[flat] {
            continue;
        }
        let d = dt_fb.dist[flat];
        if d >= 4.0 * h {
            c1 = c1.min(w0.values[flat] / (d * d));
        }
    }

    // c2 via the distance transform of the complement: the interior-ball
    // radius at y is dist(y, complement).
    let complement = CellMask::from_flags(grid, contact0.flags.iter().map(|f| !f).collect())?;
    let dt_comp = distance_transform(&complement)?;
    let contact_nodes = contact0.set_indices();
    let extent = (0..grid.dim())
        .map(|a| (hi[a] - lo[a]) as f64 * h)
        .fold(0.0f64, f64::max);
    let mut radii = Vec::new();
    let mut r = 8.0 * h;
    while r <= extent.max(8.0 * h) {
        radii.push(r);
        r *= 2.0;
    }
    let stride = (contact_nodes.len() / 64).max(1);
    let mut c2 = 0.5f64;
    for (k, &x_flat) in contact_nodes.iter().enumerate() {
        if k % stride != 0 {
            continue;
        }
        let x = grid.coord(grid.unflat(x_flat));
        for &r in &radii {
            let mut best = 0.0f64;
            for &y_flat in &contact_nodes {
                let y = grid.coord(grid.unflat(y_flat));
                let mut d2 = 0.0;
                for a in 0..grid.dim() {
                    let d = y[a] - x[a];
                    d2 += d * d;
                }
                let dist_xy = d2.sqrt();
                if dist_xy >= r {
                    continue;
                }
                best = best.max(dt_comp.dist[y_flat].min(r - dist_xy));
            }
            c2 = c2.min(best / r);
        }
    }
    Ok(RegularityEstimates { m, c1, c2 })
}

fn face_count(grid: &Grid) -> usize {
    grid.nodes().filter(|idx| grid.is_face(*idx)).count()
}
