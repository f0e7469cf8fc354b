//! PINN training: warm-up, energy-model fitting and the gated joint phase, plus baselines.

mod loss;
mod model;
mod objective;
mod train;

pub use loss::{
    beta_q, data_loss_l1, data_loss_mse, data_loss_q, gated_objective, percentile, DataLoss, GateState,
    GateTerms,
};
pub use model::PinnModel;
pub use objective::{
    data_loss_grad, data_points, data_residuals, pde_loss, pde_loss_grad, CollocationBatch, DataPoint,
    Gradient,
};
pub use train::{train, GateRow, Method, Schedule, Stage, TraceRow, TrainConfig, TrainedRun};

use crate::autodiff::AutodiffError;
use crate::ebm::EbmError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("training diverged in stage {stage} at iteration {iter}: {cause}")]
    Diverged {
        stage: &'static str,
        iter: usize,
        cause: String,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Ebm(#[from] EbmError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
