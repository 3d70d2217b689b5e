use faf_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FafError {
    /// The requested motion would damage the (simulated) sensor.
    #[error("safety limit: {0}")]
    Safety(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    #[error("task failed: {0}")]
    TaskFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FafError> = std::result::Result<T, E>;
