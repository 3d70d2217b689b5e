//! Objectives, the training loop and evaluation.

mod data;
mod eval;
mod loss;
mod train;

pub use data::{backgrounds, Batch, PreparedSet};
pub use eval::{evaluate, relative_increments, EvalCell, EvalReport, ForceEstimator, ModelEstimator, OracleEstimator};
pub use loss::{combine, loss_depth, loss_force, loss_total, normalized_error, FULL_SCALE};
pub use train::{param_groups, train, EpochLoss, LossCurve, TrainConfig};
