use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("batch size {0} is too small; training-mode batch norm needs at least 2 rows")]
    BatchSize(usize),
    #[error("weight vector is all zeros")]
    DegenerateWeights,
    #[error("correlation {0} is not supported; only values in [0, 1] are")]
    UnsupportedCorrelation(f64),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("network has no batch norm layers")]
    NoBatchNorm,
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}
