use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree on shape.
    Shape { expected: (usize, usize), got: (usize, usize) },
    /// A spectrum was handed to an operation expecting the other domain.
    Domain(&'static str),
    /// A configuration or argument violates its invariant.
    Invalid(String),
    /// A value that has to be finite was not.
    NonFinite(&'static str),
    /// The Mel filterbank has an empty filter row.
    DegenerateFilter(usize),
    /// A sampler step was asked to leave a time where the bridge has no spread.
    Boundary(&'static str),
    EmptyMatrix,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { expected, got } => write!(
                f,
                "shape mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::Domain(msg) => write!(f, "wrong spectrum domain: {msg}"),
            Error::Invalid(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::DegenerateFilter(row) => write!(f, "mel filter {row} covers no frequency bin"),
            Error::Boundary(msg) => write!(f, "sampler boundary: {msg}"),
            Error::EmptyMatrix => f.write_str("empty matrix"),
        }
    }
}

#[cfg(any(feature = "std", test))]
impl std::error::Error for Error {}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::Invalid(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
