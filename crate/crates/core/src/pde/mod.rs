//! Benchmark problems: definitions, residual operators, reference data.

mod field;
mod grf;
mod grid;
mod manufactured;
mod problem;
mod residual;
mod solver;

pub use field::{allen_cahn_reference, ReferenceField};
pub use grf::sample_grf;
pub use grid::{eval_grid, SpatialGrid};
pub use manufactured::{allen_cahn_exact_jet, manufactured_solution_ac};
pub use problem::{BenchmarkKind, PdeParamVector, ProblemSpec};
pub use residual::{
    allen_cahn_point, burgers_point, channel_jets, lambda_omega_point, residual_allen_cahn, residual_burgers,
    residual_lambda_omega, scatter_cotangent, JetLayout, PointJet, ResidualOperator,
};
pub use solver::{
    default_dt, integrate_burgers, solve_burgers_fd, solve_lambda_omega_fd, spiral_initial_condition,
    StepPlan,
};

#[derive(Debug, thiserror::Error)]
pub enum PdeError {
    #[error("CFL condition violated: ratio {ratio:.4} exceeds 0.25")]
    CflViolation { ratio: f64 },
    #[error("solution became non-finite at step {step}")]
    BlowUp { step: usize },
    #[error("network output lacks the derivative directions the residual needs")]
    MissingDirection,
    #[error("grid of size {0} is too small (need at least 8)")]
    GridTooSmall(usize),
    #[error("malformed reference field: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
