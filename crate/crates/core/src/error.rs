use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("p-value at position {index} is outside [0, 1]: {value}")]
    InvalidPValue { index: usize, value: f64 },

    #[error(
        "sample source exhausted: hypothesis {hypothesis} could not supply {requested} indicators"
    )]
    SourceExhausted { hypothesis: usize, requested: u64 },

    #[error("cannot resample from an empty p-value population")]
    EmptySource,

    #[error("round cap of {0} reached before termination")]
    RoundCap(u64),

    #[error("snapshot does not match the sample source: {0}")]
    SnapshotMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
