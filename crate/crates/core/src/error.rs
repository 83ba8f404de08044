use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Malformed input: bad index, shape mismatch, empty collection.
    InvalidArgument(String),
    /// A scalar argument outside the function's domain.
    Domain(String),
    /// A matrix that should be symmetric positive-definite is not.
    NotPositiveDefinite(String),
    /// A computation produced NaN or infinity.
    NonFinite(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::NotPositiveDefinite(msg) => write!(f, "matrix not positive-definite: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
