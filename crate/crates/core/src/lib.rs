//! Numerical laboratory for jump diffusions.
//!
//! The process under study is generated by
//!
//! ```text
//! L f(x) = 1/2 · Σ_ij ∂_i(a_ij(x) ∂_j f)(x) + ∫ [f(y) − f(x)] J(x, y) dy
//! ```
//!
//! with a uniformly elliptic diffusion matrix `a` and a jump kernel `J`
//! comparable to the symmetric stable one (`c ≤ J(x,y)·|x−y|^{d+α} ≤ 1/c`,
//! `0 < α < 2`), optionally augmented by a Schrödinger potential `q`.
//!
//! Two fully independent routes compute the same quantities:
//!
//! * **Monte Carlo** ([`sim`], [`estimate`], [`reports`]): Euler diffusion
//!   steps plus compensated power-law jumps, exit problems solved by
//!   averaging over paths (solutions, exit laws, multiplicative
//!   functionals of `q`).
//! * **Finite volume** ([`grid`]): an explicit discrete generator on a
//!   cubic mesh, its killed inverse (a Green matrix), boundary kernels and
//!   gauges obtained by direct linear algebra.
//!
//! Agreement between the two routes, and the inequalities each must
//! satisfy (scale-free interior comparisons, boundary growth and decay,
//! kernel factorizations), are what the test suite and the command line
//! verify.

pub mod estimate;
pub mod geom;
pub mod grid;
pub mod kato;
pub mod model;
pub mod quad;
pub mod reports;
pub mod sim;
pub mod stats;

pub use estimate::{EstimateError, ExitLawCells, HarmonicMeasureEstimate};
pub use geom::{BallDomain, BoundaryChart, ExitDomain};
pub use model::{DiffusionField, JumpKernel, OperatorModel, Potential};
pub use sim::{ExitRecord, PathConfig};
pub use stats::{Estimate, RunningStats};
