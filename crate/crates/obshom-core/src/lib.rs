//! Numerical obstacle problems with oscillatory obstacles.
//!
//! This crate solves the discrete complementarity systems
//! `min{f - lap(u), u - phi} = 0` on boxes (Dirichlet data) and tori
//! (periodic), extracts contact sets and free boundaries, builds the
//! coarsened "bulk" contact set on a lattice whose side is tied to the
//! minimal length scale `r(eps)`, and measures Hausdorff-distance and
//! gradient convergence rates across an `eps` sweep.
//!
//! Modules:
//! - [`grid`]: uniform grids, scalar fields, masks, stencils.
//! - [`io`]: field/mask file format (JSON metadata + raw binary values).
//! - [`solver`]: projected SOR for the complementarity systems.
//! - [`corrector`]: periodic cell problem, height `E(mu)`, rate fits,
//!   minimal length scale `r(eps)`.
//! - [`geometry`]: free boundaries, bulk lattice sets, exact distance
//!   transforms, Hausdorff distances, non-degeneracy probes.
//! - [`experiments`]: scenario configs and the convergence pipeline.

pub mod corrector;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{CellMask, Grid, ScalarField, Topology};
pub use solver::{ComplementaritySolution, ObstacleProblemSpec};
