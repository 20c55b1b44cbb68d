//! Scenario configuration and the eps-sweep convergence pipeline: solve the
//! background and oscillatory problems per eps, evaluate the minimal length
//! scale, build the bulk contact set and bulk free boundary, and measure
//! Hausdorff distances, sandwich margins, corrected-obstacle margins,
//! non-degeneracy margins and averaged gradient differences.

use crate::corrector::{solve_corrector, LengthScaleParams};
use crate::error::{Error, Result};
use crate::geometry::{
    ball_inside_box, bulk_contact_set, bulk_free_boundary, free_boundary,
    hausdorff_distance, nondegeneracy_probe, regularity_estimates, ProbeEntry, ProbeReport,
    RegularityEstimates,
};
use crate::grid::{
    ball_extremum, extend_periodic, gradient, max_second_difference, require_same_grid, CellMask,
    Extremum, Grid, ScalarField,
};
use crate::io;
use crate::solver::{
    height_fields, solve_complementarity_with_guess, solve_u0, verify_complementarity,
    ComplementaritySolution, ObstacleProblemSpec, SolverParams,
};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

// --- configuration -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleFamily {
    /// phi0(x) = c - b |x|^2.
    Paraboloid { c: f64, b: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiFamily {
    /// -sin^2(pi x_1): depends on the first coordinate only (zero set of
    /// codimension 1).
    Laminar,
    /// prod_k sin^2(pi x_k) - 1: a single smooth quadratic peak per cell at
    /// the cell center (zero set of codimension n).
    IsolatedPeak,
    /// -min(1, |x - center|^s): a Hoelder cusp at the cell center.
    Cusp { s: f64 },
    /// Constant obstacle in [-1, 0].
    Constant { value: f64 },
}

impl PsiFamily {
    pub fn eval(&self, dim: usize, y: &[f64]) -> f64 {
        match self {
            PsiFamily::Laminar => -(std::f64::consts::PI * y[0]).sin().powi(2),
            PsiFamily::IsolatedPeak => {
                let mut prod = 1.0;
                for a in 0..dim {
                    prod *= (std::f64::consts::PI * y[a]).sin().powi(2);
                }
                prod - 1.0
            }
            PsiFamily::Cusp { s } => {
                let mut d2 = 0.0;
                for a in 0..dim {
                    let d = y[a] - 0.5;
                    d2 += d * d;
                }
                -d2.sqrt().powf(*s).min(1.0)
            }
            PsiFamily::Constant { value } => *value,
        }
    }

    /// Sample on the unit torus at the given resolution.
    pub fn cell_field(&self, dim: usize, resolution: usize) -> Result<ScalarField> {
        let g = Grid::unit_torus(dim, resolution)?;
        crate::grid::sample(|y| self.eval(dim, y), &g)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Relaxation factor, a number or "auto".
    #[serde(default = "default_omega")]
    pub omega: serde_json::Value,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default)]
    pub log_convergence: bool,
}

fn default_omega() -> serde_json::Value {
    serde_json::Value::from(crate::solver::DEFAULT_OMEGA)
}
fn default_rel_tol() -> f64 {
    crate::solver::DEFAULT_REL_TOL
}
fn default_max_sweeps() -> usize {
    crate::solver::DEFAULT_MAX_SWEEPS
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            omega: default_omega(),
            rel_tol: default_rel_tol(),
            max_sweeps: default_max_sweeps(),
            log_convergence: false,
        }
    }
}

impl SolverConfig {
    pub fn params(&self) -> Result<SolverParams> {
        let omega = match &self.omega {
            serde_json::Value::String(s) if s == "auto" => None,
            serde_json::Value::Number(n) => Some(n.as_f64().unwrap()),
            other => {
                return Err(Error::Config(format!(
                    "solver.omega must be a number or \"auto\", got {other}"
                )))
            }
        };
        if let Some(w) = omega {
            if !(w > 0.0 && w < 2.0) {
                return Err(Error::Config(format!("solver.omega must lie in (0,2), got {w}")));
            }
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("solver.rel_tol must be positive".into()));
        }
        Ok(SolverParams {
            omega,
            rel_tol: self.rel_tol,
            max_sweeps: self.max_sweeps,
            log_convergence: self.log_convergence,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mu_list: Vec<f64>,
    pub cell_resolution: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub dim: usize,
    pub domain: DomainBox,
    pub obstacle: ObstacleFamily,
    pub psi: PsiFamily,
    pub p: f64,
    pub lambda: f64,
    /// Dyadic eps values, strictly descending.
    pub eps_list: Vec<f64>,
    /// Target nodes per oscillation period: h = eps / eps_over_h.
    #[serde(default = "default_eps_over_h")]
    pub eps_over_h: usize,
    /// Per-axis cell cap; h grows (keeping eps/h integral) when exceeded.
    #[serde(default = "default_max_cells")]
    pub max_cells_per_axis: usize,
    /// Unit-cell resolution for the r(eps) corrector solves.
    #[serde(default = "default_cell_resolution")]
    pub cell_resolution: usize,
    /// Bulk lattice anchor; defaults to the grid origin.
    #[serde(default)]
    pub lattice_anchor: Option<Vec<f64>>,
    /// When set, geometry is re-run with the anchor shifted by this fraction
    /// of the cube side per axis, to confirm anchor insensitivity.
    #[serde(default)]
    pub anchor_shift_fraction: Option<f64>,
    /// Probe radii as multiples of r(eps).
    #[serde(default = "default_probe_factors")]
    pub probe_radius_factors: Vec<f64>,
    /// Target number of probe points per row (strided sampling).
    #[serde(default = "default_probe_target")]
    pub probe_target: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    /// Recorded in the summary; the pipeline itself is deterministic.
    #[serde(default)]
    pub seed: u64,
}

fn default_eps_over_h() -> usize {
    32
}
fn default_max_cells() -> usize {
    1024
}
fn default_cell_resolution() -> usize {
    512
}
fn default_probe_factors() -> Vec<f64> {
    vec![2.0, 4.0, 8.0]
}
fn default_probe_target() -> usize {
    1000
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<ScenarioConfig> {
        let config: ScenarioConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::Config(format!("dim must be 1..=3, got {}", self.dim)));
        }
        if self.domain.min.len() != self.dim || self.domain.max.len() != self.dim {
            return Err(Error::Config("domain min/max must have dim entries".into()));
        }
        let extent = self.domain.max[0] - self.domain.min[0];
        for a in 0..self.dim {
            let e = self.domain.max[a] - self.domain.min[a];
            if !(e > 0.0) {
                return Err(Error::Config(format!("domain axis {a} has nonpositive extent")));
            }
            if (e - extent).abs() > 1e-12 {
                return Err(Error::Config("domain must have equal extents per axis".into()));
            }
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config(format!("lambda must lie in (0,1], got {}", self.lambda)));
        }
        if !self.p.is_finite() {
            return Err(Error::Config("p must be finite".into()));
        }
        match &self.obstacle {
            ObstacleFamily::Paraboloid { c, b } => {
                let two_nb = 2.0 * self.dim as f64 * b;
                if two_nb < self.lambda - 1e-12 || two_nb > 1.0 / self.lambda + 1e-12 {
                    return Err(Error::Config(format!(
                        "paraboloid curvature 2nb = {two_nb} outside the ellipticity window [{}, {}]",
                        self.lambda,
                        1.0 / self.lambda
                    )));
                }
                if !(*c > 0.0) {
                    return Err(Error::Config("paraboloid c must be positive".into()));
                }
            }
        }
        if let PsiFamily::Constant { value } = self.psi {
            if !(ue_range(value)) {
                return Err(Error::Config(format!(
                    "constant psi must lie in [-1, 0], got {value}"
                )));
            }
        }
        if self.eps_list.is_empty() {
            return Err(Error::Config("eps_list must not be empty".into()));
        }
        for w in self.eps_list.windows(2) {
            if !(w[0] > w[1]) {
                return Err(Error::Config("eps_list must be strictly descending".into()));
            }
        }
        for eps in &self.eps_list {
            if !(*eps > 0.0 && *eps <= 1.0) {
                return Err(Error::Config(format!("eps must lie in (0,1], got {eps}")));
            }
        }
        if self.eps_over_h == 0 || self.max_cells_per_axis < 4 {
            return Err(Error::Config("eps_over_h and max_cells_per_axis must be positive".into()));
        }
        if self.cell_resolution < 3 {
            return Err(Error::Config("cell_resolution must be at least 3".into()));
        }
        if let Some(anchor) = &self.lattice_anchor {
            if anchor.len() != self.dim {
                return Err(Error::Config("lattice_anchor must have dim entries".into()));
            }
        }
        if self.probe_radius_factors.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config("probe_radius_factors must be positive".into()));
        }
        self.solver.params()?;
        if let Some(sweep) = &self.sweep {
            if sweep.cell_resolution < 3 {
                return Err(Error::Config("sweep.cell_resolution must be at least 3".into()));
            }
            if sweep.mu_list.iter().any(|m| !(*m > 0.0)) {
                return Err(Error::Config("sweep.mu_list must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn obstacle_fn(&self) -> impl Fn(&[f64]) -> f64 + '_ {
        let dim = self.dim;
        move |x: &[f64]| match &self.obstacle {
            ObstacleFamily::Paraboloid { c, b } => {
                let mut r2 = 0.0;
                for a in 0..dim {
                    r2 += x[a] * x[a];
                }
                c - b * r2
            }
        }
    }

    pub fn length_scale_params(&self) -> LengthScaleParams {
        LengthScaleParams { p: self.p, lambda: self.lambda, cell_resolution: self.cell_resolution }
    }

    /// Grid for one eps row: h = eps/eps_over_h, coarsened to respect the
    /// per-axis cell cap while keeping eps/h integral.
    pub fn grid_for_eps(&self, eps: f64) -> Result<(Grid, usize)> {
        let extent = self.domain.max[0] - self.domain.min[0];
        let mut h = eps / self.eps_over_h as f64;
        let mut cells = extent / h;
        if (cells - cells.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "domain extent {extent} is not an integer number of cells at h = {h}"
            )));
        }
        if cells.round() as usize > self.max_cells_per_axis {
            cells = self.max_cells_per_axis as f64;
            h = extent / cells;
        }
        let m_f = eps / h;
        let m = m_f.round() as usize;
        if m == 0 || (m_f - m as f64).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "eps/h = {m_f} is not an integer after applying the cell cap"
            )));
        }
        let mut cells_arr = [0usize; 3];
        let mut origin = [0.0f64; 3];
        for a in 0..self.dim {
            cells_arr[a] = cells.round() as usize;
            origin[a] = self.domain.min[a];
        }
        Ok((Grid::dirichlet_box(self.dim, cells_arr, h, origin)?, m))
    }

    fn anchor_array(&self) -> Option<[f64; 3]> {
        self.lattice_anchor.as_ref().map(|v| {
            let mut a = [0.0f64; 3];
            for (i, x) in v.iter().enumerate() {
                a[i] = *x;
            }
            a
        })
    }
}

fn ue_range(v: f64) -> bool {
    (-1.0..=0.0).contains(&v)
}

// --- margin checks -------------------------------------------------------

/// Node-wise sandwich check `w0 - r(eps)^2 - slack <= w_eps <= w0 + slack`
/// with slack `C_d h^2`. Margins are raw (no slack folded in); violations
/// beyond slack error out with the node location.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SandwichReport {
    /// min over nodes of `w_eps - (w0 - r_eps^2)`.
    pub lo_margin: f64,
    /// min over nodes of `w0 - w_eps`.
    pub hi_margin: f64,
    pub slack: f64,
}

pub fn sandwich_check(
    w0: &ScalarField,
    weps: &ScalarField,
    r_eps: f64,
    lambda: f64,
) -> Result<SandwichReport> {
    require_same_grid(&w0.grid, &weps.grid, "sandwich")?;
    let h = w0.grid.spacing();
    let c_d = 4.0 * (1.0 / lambda + max_second_difference(w0));
    let slack = c_d * h * h;
    let r2 = r_eps * r_eps;
    let mut lo = f64::INFINITY;
    let mut hi = f64::INFINITY;
    let mut lo_node = 0usize;
    let mut hi_node = 0usize;
    for i in 0..w0.values.len() {
        let l = weps.values[i] - (w0.values[i] - r2);
        if l < lo {
            lo = l;
            lo_node = i;
        }
        let u = w0.values[i] - weps.values[i];
        if u < hi {
            hi = u;
            hi_node = i;
        }
    }
    if lo < -slack {
        return Err(Error::InvariantViolation {
            what: format!(
                "sandwich lower bound at node {:?}",
                w0.grid.unflat(lo_node)
            ),
            lhs: lo,
            rhs: -slack,
        });
    }
    if hi < -slack {
        return Err(Error::InvariantViolation {
            what: format!(
                "sandwich upper bound at node {:?}",
                w0.grid.unflat(hi_node)
            ),
            lhs: hi,
            rhs: -slack,
        });
    }
    Ok(SandwichReport { lo_margin: lo, hi_margin: hi, slack })
}

/// Corrected-obstacle check: `w_eps >= eps^p chi_mu(x/eps) - slack` with the
/// corrector solved at cell resolution eps/h, so the comparison is between
/// fields on matched stencils. Returns the raw minimal margin.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CorrectedObstacleReport {
    /// min over nodes of `w_eps - eps^p chi(x/eps)`.
    pub margin: f64,
    pub slack: f64,
    /// Height of the corrector used by the check.
    pub chi_height: f64,
}

pub fn corrected_obstacle_check(
    weps: &ScalarField,
    psi_cell: &ScalarField,
    eps: f64,
    p: f64,
    lambda: f64,
    cell_resolution: usize,
    solver: &SolverParams,
) -> Result<CorrectedObstacleReport> {
    let grid = weps.grid;
    let h = grid.spacing();
    let psi_check = subsample_cell(psi_cell, cell_resolution)?;
    let mu = eps.powf(2.0 - p) / lambda;
    let rec = solve_corrector(&psi_check, mu, solver)?;
    let chi_ext = extend_periodic(&rec.chi, &grid, eps)?;
    let amp = eps.powf(p);
    let slack = (8.0 / lambda) * h * h + 100.0 * rec.tol;
    let mut margin = f64::INFINITY;
    let mut node = 0usize;
    for i in 0..weps.values.len() {
        let m = weps.values[i] - amp * chi_ext.values[i];
        if m < margin {
            margin = m;
            node = i;
        }
    }
    if margin < -slack {
        return Err(Error::InvariantViolation {
            what: format!(
                "corrected-obstacle lower bound at node {:?}",
                grid.unflat(node)
            ),
            lhs: margin,
            rhs: -slack,
        });
    }
    Ok(CorrectedObstacleReport { margin, slack, chi_height: rec.height })
}

/// Extract an aligned subgrid of a unit-cell field (stride = old/new).
pub fn subsample_cell(cell: &ScalarField, new_resolution: usize) -> Result<ScalarField> {
    let r = cell.grid.shape()[0];
    if new_resolution == r {
        return Ok(cell.clone());
    }
    if new_resolution == 0 || r % new_resolution != 0 {
        return Err(Error::Resolution(format!(
            "cell resolution {r} is not a multiple of requested resolution {new_resolution}"
        )));
    }
    let stride = r / new_resolution;
    let dim = cell.grid.dim();
    let coarse = Grid::unit_torus(dim, new_resolution)?;
    let mut values = vec![0.0; coarse.node_count()];
    for idx in coarse.nodes() {
        let mut fine_idx = [0usize; 3];
        for a in 0..dim {
            fine_idx[a] = idx[a] * stride;
        }
        values[coarse.flat(idx)] = cell.values[cell.grid.flat(fine_idx)];
    }
    ScalarField::from_values(coarse, values)
}

/// Ball-averaged RMS of the gradient difference, over balls of radius
/// r(eps) centered at (strided) nodes with `d(x, boundary) >= r(eps)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradientReport {
    pub max_rms: f64,
    /// max_rms / r_eps.
    pub ratio: f64,
    pub centers: usize,
}

pub fn gradient_check(
    w0: &ScalarField,
    weps: &ScalarField,
    r_eps: f64,
    target_centers: usize,
) -> Result<GradientReport> {
    require_same_grid(&w0.grid, &weps.grid, "gradient check")?;
    let grid = w0.grid;
    let h = grid.spacing();
    if r_eps < 4.0 * h {
        return Err(Error::Resolution(format!(
            "r(eps) = {r_eps:.3e} is below 4h = {:.3e}; balls would be node-starved",
            4.0 * h
        )));
    }
    let g0 = gradient(w0);
    let ge = gradient(weps);
    let mut sq = vec![0.0f64; grid.node_count()];
    for a in 0..grid.dim() {
        for i in 0..sq.len() {
            let d = g0[a].values[i] - ge[a].values[i];
            sq[i] += d * d;
        }
    }

    // Ball offsets in index units.
    let k = (r_eps / h).floor() as isize;
    let r2 = r_eps * r_eps;
    let mut offsets: Vec<[isize; 3]> = Vec::new();
    let range = |on: bool| if on { -k..=k } else { 0..=0 };
    for d0 in range(true) {
        for d1 in range(grid.dim() >= 2) {
            for d2 in range(grid.dim() >= 3) {
                let dd = ((d0 * d0 + d1 * d1 + d2 * d2) as f64) * h * h;
                if dd <= r2 * (1.0 + 1e-14) {
                    offsets.push([d0, d1, d2]);
                }
            }
        }
    }

    let admissible: Vec<[usize; 3]> = grid
        .nodes()
        .filter(|idx| {
            let x = grid.coord(*idx);
            (0..grid.dim()).all(|a| {
                let lo = grid.origin()[a];
                let hi = lo + (grid.shape()[a] - 1) as f64 * h;
                x[a] - lo >= r_eps && hi - x[a] >= r_eps
            })
        })
        .collect();
    if admissible.is_empty() {
        return Err(Error::EmptyRegion("no admissible gradient-check centers".into()));
    }
    let stride = (admissible.len() / target_centers.max(1)).max(1);
    let mut max_rms: f64 = 0.0;
    let mut centers = 0usize;
    for (j, idx) in admissible.iter().enumerate() {
        if j % stride != 0 {
            continue;
        }
        centers += 1;
        let mut acc = 0.0;
        for off in &offsets {
            let mut nidx = [0usize; 3];
            for a in 0..3 {
                nidx[a] = (idx[a] as isize + off[a]) as usize;
            }
            acc += sq[grid.flat(nidx)];
        }
        max_rms = max_rms.max((acc / offsets.len() as f64).sqrt());
    }
    Ok(GradientReport { max_rms, ratio: max_rms / r_eps, centers })
}

/// Quadratic growth at the bulk free boundary:
/// `sup_{B_r(x)} w_eps >= (lambda/8n) r^2 - 2 r(eps)^2 - slack` at (strided)
/// bulk-free-boundary nodes, slack `C_d h r`.
pub fn bulk_nondegeneracy_check(
    weps: &ScalarField,
    bulk_fb: &CellMask,
    r_eps: f64,
    lambda: f64,
    radii: &[f64],
    target_points: usize,
) -> Result<ProbeReport> {
    require_same_grid(&weps.grid, &bulk_fb.grid, "bulk non-degeneracy")?;
    let grid = weps.grid;
    let n = grid.dim() as f64;
    let c = lambda / (8.0 * n);
    let c_d = 4.0 * max_second_difference(weps);
    let h = grid.spacing();
    let nodes = bulk_fb.set_indices();
    let stride = ((nodes.len() * radii.len()) / target_points.max(1)).max(1);
    let mut entries = Vec::new();
    for (k, flat) in nodes.into_iter().enumerate() {
        if k % stride != 0 {
            continue;
        }
        let idx = grid.unflat(flat);
        let x = grid.coord(idx);
        for &r in radii {
            if !ball_inside_box(&grid, &x, r) {
                continue;
            }
            let lhs = ball_extremum(weps, &x[..grid.dim()], r, Extremum::Sup)?;
            let rhs = c * r * r - 2.0 * r_eps * r_eps;
            entries.push(ProbeEntry { center: x, r, lhs, rhs, margin: lhs - rhs + c_d * h * r });
        }
    }
    if entries.is_empty() {
        warn!("bulk non-degeneracy check found no admissible (node, radius) pair");
    }
    let violations = entries.iter().filter(|e| e.margin < 0.0).count();
    let worst = entries.iter().map(|e| e.margin).fold(f64::INFINITY, f64::min);
    let empty = entries.is_empty();
    Ok(ProbeReport {
        entries,
        violations,
        worst_margin: if empty { 0.0 } else { worst },
        c_d,
        empty,
    })
}

// --- the convergence pipeline -------------------------------------------

/// Everything measured for one eps row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsRow {
    pub eps: f64,
    pub r_eps: f64,
    pub mu: f64,
    pub cells_per_axis: usize,
    pub eps_over_h: usize,
    pub cube_side: f64,
    pub dh_contact: f64,
    pub dh_fb: f64,
    pub dh_contact_shifted: Option<f64>,
    pub dh_fb_shifted: Option<f64>,
    pub sandwich_lo: f64,
    pub sandwich_hi: f64,
    pub sandwich_slack: f64,
    pub corrector_margin: f64,
    pub corrector_slack: f64,
    pub nondeg_margin: f64,
    pub nondeg_points: usize,
    pub nondeg_violations: usize,
    pub grad_rms_ratio: f64,
    pub grad_centers: usize,
    pub u0_residual: f64,
    pub ueps_residual: f64,
    pub tol: f64,
    /// Laplacian-unit gate actually enforced (tol or the roundoff guard).
    pub tol_effective: f64,
    pub status: String,
    /// True when the failure was a violated bound rather than an
    /// operational error.
    #[serde(default)]
    pub invariant_failure: bool,
}

impl EpsRow {
    fn failed(eps: f64, stage: &str, err: &Error) -> EpsRow {
        warn!("eps = {eps}: {stage} failed: {err}");
        let invariant = matches!(err, Error::InvariantViolation { .. });
        EpsRow {
            eps,
            r_eps: f64::NAN,
            mu: f64::NAN,
            cells_per_axis: 0,
            eps_over_h: 0,
            cube_side: f64::NAN,
            dh_contact: f64::NAN,
            dh_fb: f64::NAN,
            dh_contact_shifted: None,
            dh_fb_shifted: None,
            sandwich_lo: f64::NAN,
            sandwich_hi: f64::NAN,
            sandwich_slack: f64::NAN,
            corrector_margin: f64::NAN,
            corrector_slack: f64::NAN,
            nondeg_margin: f64::NAN,
            nondeg_points: 0,
            nondeg_violations: 0,
            grad_rms_ratio: f64::NAN,
            grad_centers: 0,
            u0_residual: f64::NAN,
            ueps_residual: f64::NAN,
            tol: f64::NAN,
            tol_effective: f64::NAN,
            status: format!("failed:{stage}"),
            invariant_failure: invariant,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Constants fitted over the successful rows: max ratio to r(eps).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FittedConstants {
    pub c_contact: f64,
    pub c_fb: f64,
    pub c_grad: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub scenario: String,
    pub rows: Vec<EpsRow>,
    pub fitted: FittedConstants,
    pub fitted_shifted: Option<FittedConstants>,
    pub regularity: Option<RegularityEstimates>,
    pub elapsed_seconds: f64,
}

struct RowData {
    row: EpsRow,
    w0: ScalarField,
    weps: ScalarField,
    contact0: CellMask,
    contact_eps: CellMask,
}

fn max_ratio<F: Fn(&EpsRow) -> f64>(rows: &[EpsRow], f: F) -> f64 {
    rows.iter()
        .filter(|r| r.is_ok())
        .map(|r| f(r) / r.r_eps)
        .fold(0.0f64, f64::max)
}

/// Run the full eps sweep. When `out_dir` is set, per-row height fields,
/// contact masks and row metadata are written there (plus report.csv and
/// summary.json via the emit helpers).
pub fn run_convergence(config: &ScenarioConfig, out_dir: Option<&Path>) -> Result<ConvergenceReport> {
    config.validate()?;
    let started = Instant::now();
    let params = config.solver.params()?;
    let psi_cell = config.psi.cell_field(config.dim, config.cell_resolution)?;

    // One background solve per unique grid (rows capped to the same grid
    // share it).
    let mut grids: BTreeMap<usize, (Grid, usize)> = BTreeMap::new();
    for eps in &config.eps_list {
        let (grid, m) = config.grid_for_eps(*eps)?;
        grids.entry(grid.shape()[0] - 1).or_insert((grid, m));
    }
    info!(
        "scenario {}: {} eps rows over {} unique grids",
        config.name,
        config.eps_list.len(),
        grids.len()
    );
    let u0_solutions: BTreeMap<usize, (ComplementaritySolution, ScalarField, f64)> = grids
        .par_iter()
        .map(|(cells, (grid, _))| {
            let phi0 = crate::grid::sample(config.obstacle_fn(), grid)?;
            let boundary = ScalarField::constant(*grid, 0.0);
            let sol = solve_u0(&phi0, &boundary, config.lambda, &params)?;
            let spec = ObstacleProblemSpec::new(
                phi0.clone(),
                ScalarField::constant(*grid, 0.0),
                Some(boundary),
                &params,
            )?;
            let diag = verify_complementarity(&sol, &spec)?;
            Ok((*cells, (sol, phi0, diag.residual)))
        })
        .collect::<Result<_>>()?;

    let rows: Vec<RowData> = config
        .eps_list
        .par_iter()
        .map(|&eps| run_row(config, &params, &psi_cell, &u0_solutions, eps))
        .collect();

    let mut report_rows = Vec::new();
    let mut regularity = None;
    let mut out_rows: Vec<&RowData> = Vec::new();
    for data in &rows {
        if data.row.is_ok() && regularity.is_none() && !data.contact0.is_empty() {
            regularity = regularity_estimates(&data.w0, &data.contact0).ok();
        }
        report_rows.push(data.row.clone());
        out_rows.push(data);
    }

    if !report_rows.iter().any(|r| r.is_ok()) {
        return Err(Error::Experiment(format!(
            "every eps row of scenario {} failed",
            config.name
        )));
    }

    // r(eps) must decay monotonically over the sweep.
    let ok_rows: Vec<&EpsRow> = report_rows.iter().filter(|r| r.is_ok()).collect();
    for w in ok_rows.windows(2) {
        if !(w[0].r_eps > w[1].r_eps) {
            return Err(Error::Experiment(format!(
                "r(eps) is not decreasing: r({}) = {} vs r({}) = {}",
                w[0].eps, w[0].r_eps, w[1].eps, w[1].r_eps
            )));
        }
    }

    let fitted = FittedConstants {
        c_contact: max_ratio(&report_rows, |r| r.dh_contact),
        c_fb: max_ratio(&report_rows, |r| r.dh_fb),
        c_grad: report_rows
            .iter()
            .filter(|r| r.is_ok())
            .map(|r| r.grad_rms_ratio)
            .fold(0.0f64, f64::max),
    };
    let fitted_shifted = if config.anchor_shift_fraction.is_some() {
        Some(FittedConstants {
            c_contact: max_ratio(&report_rows, |r| r.dh_contact_shifted.unwrap_or(f64::NAN)),
            c_fb: max_ratio(&report_rows, |r| r.dh_fb_shifted.unwrap_or(f64::NAN)),
            c_grad: fitted.c_grad,
        })
    } else {
        None
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        for (k, data) in out_rows.iter().enumerate() {
            if !data.row.is_ok() {
                continue;
            }
            io::save_field(&data.w0, dir, &format!("w0_{k}"))?;
            io::save_field(&data.weps, dir, &format!("weps_{k}"))?;
            io::save_mask(&data.contact0, dir, &format!("contact0_{k}"))?;
            io::save_mask(&data.contact_eps, dir, &format!("contacteps_{k}"))?;
            io::write_atomic(
                &dir.join(format!("row_{k}.json")),
                serde_json::to_string_pretty(&data.row)?.as_bytes(),
            )?;
        }
    }

    Ok(ConvergenceReport {
        scenario: config.name.clone(),
        rows: report_rows,
        fitted,
        fitted_shifted,
        regularity,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

fn run_row(
    config: &ScenarioConfig,
    params: &SolverParams,
    psi_cell: &ScalarField,
    u0_solutions: &BTreeMap<usize, (ComplementaritySolution, ScalarField, f64)>,
    eps: f64,
) -> RowData {
    let empty_fields = || {
        let g = Grid::unit_torus(1, 3).unwrap();
        (
            ScalarField::constant(g, 0.0),
            ScalarField::constant(g, 0.0),
            CellMask::empty(g),
            CellMask::empty(g),
        )
    };
    macro_rules! try_stage {
        ($stage:literal, $expr:expr) => {
            match $expr {
                Ok(v) => v,
                Err(err) => {
                    let (w0, weps, c0, ce) = empty_fields();
                    return RowData {
                        row: EpsRow::failed(eps, $stage, &err),
                        w0,
                        weps,
                        contact0: c0,
                        contact_eps: ce,
                    };
                }
            }
        };
    }

    let (grid, m) = try_stage!("grid", config.grid_for_eps(eps));
    let cells = grid.shape()[0] - 1;
    let (u0_sol, phi0, u0_residual) = u0_solutions.get(&cells).expect("precomputed u0").clone();

    // Fine-cell corrector fixes r(eps).
    let mu = config.length_scale_params().mu_of_eps(eps);
    let fine_rec = try_stage!("corrector", solve_corrector(psi_cell, mu, params));
    let r_eps = (eps.powf(config.p) * fine_rec.height).sqrt();

    // Oscillatory solve, warm-started from u0.
    let boundary = ScalarField::constant(grid, 0.0);
    let psi_ext = try_stage!("psi-extension", extend_periodic(psi_cell, &grid, eps));
    let amp = eps.powf(config.p);
    let phi_eps = try_stage!(
        "phi-eps",
        ScalarField::from_values(
            grid,
            phi0.values
                .iter()
                .zip(&psi_ext.values)
                .map(|(a, b)| a + amp * b)
                .collect(),
        )
    );
    let spec = try_stage!(
        "spec",
        ObstacleProblemSpec::new(
            phi_eps,
            ScalarField::constant(grid, 0.0),
            Some(boundary),
            params
        )
    );
    let ueps_sol = try_stage!("ueps", solve_complementarity_with_guess(&spec, &u0_sol.u));
    let ueps_diag = try_stage!("ueps-verify", verify_complementarity(&ueps_sol, &spec));
    let (w0, weps) = try_stage!("heights", height_fields(&u0_sol, &ueps_sol, &phi0));

    macro_rules! try_stage_keep {
        ($stage:literal, $expr:expr) => {
            match $expr {
                Ok(v) => v,
                Err(err) => {
                    return RowData {
                        row: EpsRow::failed(eps, $stage, &err),
                        w0,
                        weps,
                        contact0: u0_sol.contact.clone(),
                        contact_eps: ueps_sol.contact.clone(),
                    };
                }
            }
        };
    }

    let anchor = config.anchor_array();
    let gamma0 = try_stage_keep!("free-boundary", free_boundary(&u0_sol.contact));
    let (bulk, lattice) = try_stage_keep!(
        "bulk",
        bulk_contact_set(&ueps_sol.contact, r_eps, config.lambda, anchor)
    );
    let gamma_bulk = try_stage_keep!("bulk-fb", bulk_free_boundary(&bulk));
    let dh_contact = try_stage_keep!("dh-contact", hausdorff_distance(&u0_sol.contact, &bulk));
    let dh_fb = try_stage_keep!("dh-fb", hausdorff_distance(&gamma0, &gamma_bulk));

    // Anchor-shift rerun of the geometry stage only.
    let (dh_contact_shifted, dh_fb_shifted) = if let Some(frac) = config.anchor_shift_fraction {
        let mut shifted = anchor.unwrap_or(grid.origin());
        for a in 0..config.dim {
            shifted[a] += frac * lattice.cube_side;
        }
        let (bulk_s, _) = try_stage_keep!(
            "bulk-shifted",
            bulk_contact_set(&ueps_sol.contact, r_eps, config.lambda, Some(shifted))
        );
        let gamma_s = try_stage_keep!("bulk-fb-shifted", bulk_free_boundary(&bulk_s));
        (
            Some(try_stage_keep!(
                "dh-contact-shifted",
                hausdorff_distance(&u0_sol.contact, &bulk_s)
            )),
            Some(try_stage_keep!(
                "dh-fb-shifted",
                hausdorff_distance(&gamma0, &gamma_s)
            )),
        )
    } else {
        (None, None)
    };

    let sandwich = try_stage_keep!(
        "sandwich",
        sandwich_check(&w0, &weps, r_eps, config.lambda)
    );
    let corrected = try_stage_keep!(
        "corrected-obstacle",
        corrected_obstacle_check(&weps, psi_cell, eps, config.p, config.lambda, m, params)
    );

    let radii: Vec<f64> = config.probe_radius_factors.iter().map(|f| f * r_eps).collect();
    let lemma_probe = try_stage_keep!(
        "nondeg-probe",
        nondegeneracy_probe(
            &weps,
            &ueps_sol.contact,
            r_eps,
            config.lambda,
            &radii,
            config.probe_target
        )
    );
    let bulk_probe = try_stage_keep!(
        "bulk-nondeg",
        bulk_nondegeneracy_check(
            &weps,
            &gamma_bulk,
            r_eps,
            config.lambda,
            &radii,
            config.probe_target
        )
    );
    let nondeg_points = lemma_probe.entries.len() + bulk_probe.entries.len();
    let nondeg_violations = lemma_probe.violations + bulk_probe.violations;
    let nondeg_margin = lemma_probe.worst_margin.min(bulk_probe.worst_margin);

    let grad = try_stage_keep!(
        "gradient",
        gradient_check(&w0, &weps, r_eps, config.probe_target)
    );

    let row = EpsRow {
        eps,
        r_eps,
        mu,
        cells_per_axis: cells,
        eps_over_h: m,
        cube_side: lattice.cube_side,
        dh_contact,
        dh_fb,
        dh_contact_shifted,
        dh_fb_shifted,
        sandwich_lo: sandwich.lo_margin,
        sandwich_hi: sandwich.hi_margin,
        sandwich_slack: sandwich.slack,
        corrector_margin: corrected.margin,
        corrector_slack: corrected.slack,
        nondeg_margin,
        nondeg_points,
        nondeg_violations,
        grad_rms_ratio: grad.ratio,
        grad_centers: grad.centers,
        u0_residual,
        ueps_residual: ueps_diag.residual,
        tol: spec.tol,
        tol_effective: u0_sol.tol_effective.max(ueps_sol.tol_effective),
        status: "ok".into(),
        invariant_failure: false,
    };
    RowData {
        row,
        w0,
        weps,
        contact0: u0_sol.contact.clone(),
        contact_eps: ueps_sol.contact.clone(),
    }
}

/// Re-run the geometry and margin checks on previously written row fields,
/// without solving. Used for verification-only runs (and fault injection).
pub fn verify_convergence(config: &ScenarioConfig, dir: &Path) -> Result<ConvergenceReport> {
    config.validate()?;
    let started = Instant::now();
    let params = config.solver.params()?;
    let psi_cell = config.psi.cell_field(config.dim, config.cell_resolution)?;
    let mut rows = Vec::new();
    for (k, &eps) in config.eps_list.iter().enumerate() {
        let meta_path = dir.join(format!("row_{k}.json"));
        if !meta_path.exists() {
            rows.push(EpsRow::failed(
                eps,
                "load",
                &Error::Config(format!("{} is missing", meta_path.display())),
            ));
            continue;
        }
        let stored: EpsRow = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
        let w0 = io::load_field(&dir.join(format!("w0_{k}.json")))?;
        let weps = io::load_field(&dir.join(format!("weps_{k}.json")))?;
        let contact0 = io::load_mask(&dir.join(format!("contact0_{k}.json")))?;
        let contact_eps = io::load_mask(&dir.join(format!("contacteps_{k}.json")))?;
        let r_eps = stored.r_eps;

        let row = (|| -> Result<EpsRow> {
            let gamma0 = free_boundary(&contact0)?;
            let (bulk, lattice) =
                bulk_contact_set(&contact_eps, r_eps, config.lambda, config.anchor_array())?;
            let gamma_bulk = bulk_free_boundary(&bulk)?;
            let dh_contact = hausdorff_distance(&contact0, &bulk)?;
            let dh_fb = hausdorff_distance(&gamma0, &gamma_bulk)?;
            let sandwich = sandwich_check(&w0, &weps, r_eps, config.lambda)?;
            let corrected = corrected_obstacle_check(
                &weps,
                &psi_cell,
                eps,
                config.p,
                config.lambda,
                stored.eps_over_h,
                &params,
            )?;
            let radii: Vec<f64> =
                config.probe_radius_factors.iter().map(|f| f * r_eps).collect();
            let lemma_probe = nondegeneracy_probe(
                &weps,
                &contact_eps,
                r_eps,
                config.lambda,
                &radii,
                config.probe_target,
            )?;
            let bulk_probe = bulk_nondegeneracy_check(
                &weps,
                &gamma_bulk,
                r_eps,
                config.lambda,
                &radii,
                config.probe_target,
            )?;
            if lemma_probe.violations + bulk_probe.violations > 0 {
                return Err(Error::InvariantViolation {
                    what: "non-degeneracy probe violations".into(),
                    lhs: lemma_probe.worst_margin.min(bulk_probe.worst_margin),
                    rhs: 0.0,
                });
            }
            let grad = gradient_check(&w0, &weps, r_eps, config.probe_target)?;
            Ok(EpsRow {
                dh_contact,
                dh_fb,
                cube_side: lattice.cube_side,
                sandwich_lo: sandwich.lo_margin,
                sandwich_hi: sandwich.hi_margin,
                sandwich_slack: sandwich.slack,
                corrector_margin: corrected.margin,
                corrector_slack: corrected.slack,
                nondeg_margin: lemma_probe.worst_margin.min(bulk_probe.worst_margin),
                nondeg_points: lemma_probe.entries.len() + bulk_probe.entries.len(),
                nondeg_violations: lemma_probe.violations + bulk_probe.violations,
                grad_rms_ratio: grad.ratio,
                grad_centers: grad.centers,
                status: "ok".into(),
                ..stored
            })
        })();
        match row {
            Ok(r) => rows.push(r),
            Err(err) => return Err(err),
        }
    }
    if !rows.iter().any(|r| r.is_ok()) {
        return Err(Error::Experiment("no verifiable rows found".into()));
    }
    let fitted = FittedConstants {
        c_contact: max_ratio(&rows, |r| r.dh_contact),
        c_fb: max_ratio(&rows, |r| r.dh_fb),
        c_grad: rows
            .iter()
            .filter(|r| r.is_ok())
            .map(|r| r.grad_rms_ratio)
            .fold(0.0f64, f64::max),
    };
    Ok(ConvergenceReport {
        scenario: config.name.clone(),
        rows,
        fitted,
        fitted_shifted: None,
        regularity: None,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

// --- emission ------------------------------------------------------------

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.17e}")
    }
}

/// Fixed-header CSV of the convergence report.
pub fn report_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from(
        "eps,r_eps,dH_contact,dH_fb,sandwich_lo,sandwich_hi,corrector_margin,nondeg_margin,grad_rms_ratio,status\n",
    );
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            fmt(r.eps),
            fmt(r.r_eps),
            fmt(r.dh_contact),
            fmt(r.dh_fb),
            fmt(r.sandwich_lo),
            fmt(r.sandwich_hi),
            fmt(r.corrector_margin),
            fmt(r.nondeg_margin),
            fmt(r.grad_rms_ratio),
            r.status
        ));
    }
    out
}

/// JSON summary with fitted constants and a byte-identical config echo.
pub fn report_summary_json(
    report: &ConvergenceReport,
    config_echo: &str,
    seed: u64,
    threads: usize,
) -> Result<String> {
    #[derive(Serialize)]
    struct Summary<'a> {
        scenario: &'a str,
        fitted: &'a FittedConstants,
        fitted_shifted: &'a Option<FittedConstants>,
        regularity: &'a Option<RegularityEstimates>,
        rows: &'a [EpsRow],
        seed: u64,
        threads: usize,
        config_echo: &'a str,
    }
    Ok(serde_json::to_string_pretty(&Summary {
        scenario: &report.scenario,
        fitted: &report.fitted,
        fitted_shifted: &report.fitted_shifted,
        regularity: &report.regularity,
        rows: &report.rows,
        seed,
        threads,
        config_echo,
    })?)
}

/// CSV of corrector sweep records, fixed header.
pub fn sweep_csv(records: &[crate::corrector::CorrectorRecord]) -> String {
    let mut out = String::from("mu,E,energy,active_fraction,sweeps\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt(r.mu),
            fmt(r.height),
            fmt(r.energy),
            fmt(r.active_fraction),
            r.sweeps_used
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample;
    use crate::solver::solve_ueps;

    fn tiny_1d_config() -> ScenarioConfig {
        ScenarioConfig::from_json(
            r#"{
                "name": "tiny-1d",
                "dim": 1,
                "domain": { "min": [-1.0], "max": [1.0] },
                "obstacle": { "family": "paraboloid", "c": 0.25, "b": 0.5 },
                "psi": { "family": "laminar" },
                "p": 1.0,
                "lambda": 1.0,
                "eps_list": [0.125, 0.0625],
                "eps_over_h": 16,
                "max_cells_per_axis": 512,
                "cell_resolution": 128,
                "anchor_shift_fraction": 0.3333333333333333,
                "probe_target": 200,
                "solver": { "omega": "auto" }
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_validation_catches_misconfigurations() {
        let mut bad = tiny_1d_config();
        bad.eps_list = vec![0.0625, 0.125];
        assert!(matches!(bad.validate(), Err(Error::Config(_))));

        let mut bad = tiny_1d_config();
        bad.lambda = 0.2; // 2nb = 1 > 1/0.2? no: window [0.2, 5]; make b violate
        bad.obstacle = ObstacleFamily::Paraboloid { c: 0.25, b: 3.0 };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));

        assert!(ScenarioConfig::from_json("{\"nope\": 1}").is_err());
    }

    #[test]
    fn sandwich_degenerate_cases() {
        let g = Grid::dirichlet_box(1, [64, 0, 0], 1.0 / 32.0, [-1.0, 0.0, 0.0]).unwrap();
        let w0 = sample(|x| (1.0 - x[0] * x[0]) * 0.1, &g).unwrap();
        // w_eps = w0: both margins are nonnegative, upper margin 0.
        let rep = sandwich_check(&w0, &w0, 0.1, 1.0).unwrap();
        assert_eq!(rep.hi_margin, 0.0);
        assert!((rep.lo_margin - 0.01).abs() <= 1e-15);

        // A violation beyond slack errors with a node location.
        let mut weps = w0.clone();
        weps.values[32] += 1.0;
        let err = sandwich_check(&w0, &weps, 0.1, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvariantViolation { .. }));
    }

    #[test]
    fn sandwich_constant_psi_is_tight() {
        // psi = -1: E = 1, r^2 = eps^p, and the lower bound is attained
        // where the oscillatory solution touches its obstacle.
        let eps = 1.0 / 8.0;
        let p = 1.0;
        let g = Grid::dirichlet_box(1, [512, 0, 0], eps / 32.0, [-1.0, 0.0, 0.0]).unwrap();
        let phi0 = sample(|x| 0.25 - x[0] * x[0] / 2.0, &g).unwrap();
        let zero = ScalarField::constant(g, 0.0);
        let cell = Grid::unit_torus(1, 64).unwrap();
        let psi = ScalarField::constant(cell, -1.0);
        let params = SolverParams::auto();
        let u0 = solve_u0(&phi0, &zero, 1.0, &params).unwrap();
        let ueps = solve_ueps(&phi0, &psi, eps, p, &zero, &params).unwrap();
        let (w0, weps) = height_fields(&u0, &ueps, &phi0).unwrap();
        let r_eps = eps.powf(p).sqrt();
        let rep = sandwich_check(&w0, &weps, r_eps, 1.0).unwrap();
        // Tight at contact nodes: margin there is w_eps - w0 + eps^p = 0
        // whenever both problems are in contact.
        assert!(rep.lo_margin.abs() <= rep.slack, "lo margin {}", rep.lo_margin);
        assert!(rep.hi_margin >= -rep.slack);
    }

    #[test]
    fn corrected_obstacle_trivial_cases() {
        let eps = 1.0 / 8.0;
        let g = Grid::dirichlet_box(1, [512, 0, 0], eps / 32.0, [-1.0, 0.0, 0.0]).unwrap();
        let phi0 = sample(|x| 0.25 - x[0] * x[0] / 2.0, &g).unwrap();
        let zero = ScalarField::constant(g, 0.0);
        let params = SolverParams::auto();

        // psi = -1: w_eps >= -eps^p exactly (the obstacle shift).
        let cell = Grid::unit_torus(1, 128).unwrap();
        let psi = ScalarField::constant(cell, -1.0);
        let ueps = solve_ueps(&phi0, &psi, eps, 1.0, &zero, &params).unwrap();
        let u0 = solve_u0(&phi0, &zero, 1.0, &params).unwrap();
        let (_, weps) = height_fields(&u0, &ueps, &phi0).unwrap();
        let rep = corrected_obstacle_check(&weps, &psi, eps, 1.0, 1.0, 32, &params).unwrap();
        assert!(rep.margin >= -rep.slack);
        assert!((rep.chi_height - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn gradient_check_trivial_cases() {
        let g = Grid::dirichlet_box(1, [256, 0, 0], 1.0 / 128.0, [-1.0, 0.0, 0.0]).unwrap();
        let w0 = sample(|x| (1.0 - x[0] * x[0]) * 0.3, &g).unwrap();
        let rep = gradient_check(&w0, &w0, 0.1, 100).unwrap();
        assert_eq!(rep.max_rms, 0.0);
        // Adding a constant leaves gradients unchanged.
        let shifted = ScalarField::from_values(g, w0.values.iter().map(|v| v + 0.37).collect()).unwrap();
        let rep = gradient_check(&w0, &shifted, 0.1, 100).unwrap();
        assert!(rep.max_rms <= 1e-13, "rms {}", rep.max_rms);
        // Under-resolved r(eps) errors.
        assert!(matches!(
            gradient_check(&w0, &w0, 2.0 * g.spacing(), 100),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn tiny_pipeline_runs_and_is_deterministic() {
        let config = tiny_1d_config();
        let report = run_convergence(&config, None).unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert!(row.is_ok(), "row {row:?}");
            assert!(row.sandwich_lo >= -row.sandwich_slack);
            assert!(row.sandwich_hi >= -row.sandwich_slack);
            assert!(row.corrector_margin >= -row.corrector_slack);
            assert_eq!(row.nondeg_violations, 0);
            assert!(row.r_eps > 0.0);
            assert!(row.u0_residual <= row.tol_effective);
            assert!(row.ueps_residual <= row.tol_effective);
            // Anchor-shift geometry was evaluated.
            assert!(row.dh_contact_shifted.is_some());
        }
        assert!(report.fitted.c_contact.is_finite());

        // Bitwise-identical CSV on rerun.
        let again = run_convergence(&config, None).unwrap();
        assert_eq!(report_csv(&report), report_csv(&again));
    }

    #[test]
    fn refinement_stability_of_hausdorff_distances() {
        // Halving h at fixed eps moves d_H by at most 4 h sqrt(n).
        let coarse = {
            let mut c = tiny_1d_config();
            c.eps_list = vec![0.125];
            c.eps_over_h = 16;
            c
        };
        let fine = {
            let mut c = coarse.clone();
            c.eps_over_h = 32;
            c
        };
        let rc = run_convergence(&coarse, None).unwrap();
        let rf = run_convergence(&fine, None).unwrap();
        let h = 0.125 / 16.0;
        // r(eps) differs slightly (same fine cell, same mu): identical.
        assert!((rc.rows[0].r_eps - rf.rows[0].r_eps).abs() <= 1e-12);
        assert!(
            (rc.rows[0].dh_contact - rf.rows[0].dh_contact).abs() <= 4.0 * h,
            "coarse {} fine {}",
            rc.rows[0].dh_contact,
            rf.rows[0].dh_contact
        );
        assert!((rc.rows[0].dh_fb - rf.rows[0].dh_fb).abs() <= 4.0 * h);
    }

    #[test]
    fn write_and_verify_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_1d_config();
        let report = run_convergence(&config, Some(dir.path())).unwrap();
        let verified = verify_convergence(&config, dir.path()).unwrap();
        assert_eq!(verified.rows.len(), report.rows.len());
        for (a, b) in report.rows.iter().zip(&verified.rows) {
            assert!(b.is_ok());
            assert_eq!(a.dh_contact, b.dh_contact);
            assert_eq!(a.dh_fb, b.dh_fb);
        }

        // Fault injection: corrupt w_eps upward somewhere; the sandwich
        // upper bound fails on verification.
        let mut weps = io::load_field(&dir.path().join("weps_0.json")).unwrap();
        let mid = weps.grid.node_count() / 2;
        weps.values[mid] += 1.0;
        io::save_field(&weps, dir.path(), "weps_0").unwrap();
        let err = verify_convergence(&config, dir.path()).unwrap_err();
        assert!(matches!(err, Error::InvariantViolation { .. }), "{err:?}");
    }
}
