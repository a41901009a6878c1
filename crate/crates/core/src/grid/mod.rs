//! Finite-volume oracle for the killed operator on a ball.
//!
//! The Monte Carlo side of the crate estimates exit functionals by
//! simulating paths; this module computes the same quantities by direct
//! linear algebra on a uniform mesh: the discrete generator, the killed
//! Green matrix, exit laws per boundary/exterior channel, gauges and
//! conditional gauges, Martin kernels, and the Green-function inequality
//! reports. The two instruments share no numerics beyond the model
//! definition, which is what makes their agreement evidence.

mod assemble;
mod export;
mod gauge;
mod green;
mod local;
mod mesh;
mod reports;

pub use assemble::{assemble_generator, conservation_defect, DiscreteGenerator};
pub use export::{
    read_matrix_binary, read_matrix_text, write_matrix_binary, write_matrix_text, ExportedMatrix,
};
pub use gauge::{
    beta_q_grid, conditional_gauge_grid, gauge_grid, harnack_grid, potential_kernel_radius,
    potential_on_cells, schrodinger_grid, BetaQReport, CondGaugeOutcome, ConditionalGauge,
    GaugeOutcome, GridRatio, PoleStats,
};
pub use green::{
    exit_law, exit_law_matrix, green_matrix, grid_dirichlet, GreenColumns, GreenMatrix,
    GreenSolver,
};
pub use local::{bhp_grid, carleson_grid, lens_hitting_probability, BhpGridReport,
    CarlesonGridReport, LensSolution};
pub use mesh::{ExitChannels, Mesh, MeshDomain};
pub use reports::{
    boundary_decay_report, check_3g, green_bounds_report, harmonic_measure_density_check,
    levy_exit_identity_check, martin_kernel, martin_oscillation, probe_cells, BoundaryDecayReport,
    DecayRow, DensityCheck, GreenBoundsReport, LevyCheck, MartinKernel, OscillationRow,
    ThreeGReport,
};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    /// Fewer than five cells would span the domain radius.
    #[error("mesh spacing {h} too coarse for radius {span}: at least five cells must span it")]
    MeshTooCoarse { h: f64, span: f64 },
    /// Model/mesh combination outside what the oracle can discretize
    /// (custom kernels have no analytic far tail, jump channels need d = 3).
    #[error("unsupported grid setup: {0}")]
    Unsupported(String),
    /// Factorization or validation of the linear system failed.
    #[error("linear solve failed: {0}")]
    SolverFailure(String),
    /// A Martin normalization column underflowed at the reference cell.
    #[error("Green column {column} degenerate at the reference cell (value {value:e})")]
    DegenerateColumn { column: usize, value: f64 },
    /// The potential's kernel operator has spectral radius ≥ 1, so the
    /// Feynman–Kac series diverges. `gauge_grid` reports this as a value;
    /// operations that need a gauge propagate it as this error.
    #[error("potential not gaugeable on the grid: kernel spectral radius {radius}")]
    NotGaugeable { radius: f64 },
    /// The solved function vanishes on the comparison set, so no ratio
    /// is defined.
    #[error("solution vanishes on the comparison set")]
    ZeroSolution,
    /// An exported-matrix file does not follow the documented layout.
    #[error("malformed matrix file: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}
