use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Caller broke an operation's precondition (lengths, ranges, empty input).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Two parameter sets do not share names, shapes and roles.
    #[error("parameter `{name}` is misaligned: {reason}")]
    Misaligned { name: String, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("codec error: {0}")]
    Codec(String),
}

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(alloc::format!($($arg)*))
    };
}
pub(crate) use contract;
