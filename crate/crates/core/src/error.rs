use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("gradient check requires a repeatable op: {0}")]
    NonDeterministic(String),
    #[error("timestamp {new} is not newer than {last}")]
    OutOfOrder { new: f64, last: f64 },
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("serialization: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
