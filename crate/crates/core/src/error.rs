use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cumulative cache `Γ = K` covers every file; there is nothing to deliver.
    #[error("no delivery needed: cumulative cache equals K")]
    NoDeliveryNeeded,

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("invalid packetization: {0}")]
    InvalidPacketization(String),

    #[error("corrupted cache: {0}")]
    CorruptedCache(String),

    #[error("decode failure: {0}")]
    DecodeFailure(String),

    #[error("undefined gap: lower bound is not positive")]
    UndefinedGap,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
