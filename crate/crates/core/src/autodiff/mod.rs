//! MLP evaluation with exact second-order input jets and reverse-mode parameter gradients.

mod adam;
pub mod checkpoint;
mod jet;
mod network;

pub use adam::{AdamConfig, AdamState};
pub use jet::{backprop_scalar, GradAccumulator, Jet2Batch, JetTape, RowLoss};
pub use network::{xavier_bound, Activation, NetworkParams, NetworkShape};

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("invalid network shape {0:?}")]
    InvalidShape(NetworkShape),
    #[error("expected {expected} parameters, got {got}")]
    ParamLength { expected: usize, got: usize },
    #[error("parameter {0} is not finite")]
    NonFiniteParam(usize),
    #[error("input width {got} does not match network input dimension {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("direction {index} out of range for input dimension {input_dim}")]
    Direction { index: usize, input_dim: usize },
    #[error("non-finite loss at batch row {index}")]
    NonFiniteLoss { index: usize },
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
