use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched vector lengths or otherwise malformed containers.
    #[error("structural error: {0}")]
    Structural(String),
    /// An argument outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A curve that cannot be mapped back to DPMP coordinates.
    #[error("inversion error: {0}")]
    Inversion(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// Non-finite values during training.
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("case error: {0}")]
    Case(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("optimality gap undefined: {0}")]
    UndefinedGap(String),
    #[error("internal error: {0}")]
    Internal(String),
}
