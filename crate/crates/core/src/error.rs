use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid sub-path geometry (path {path}, sub-path {subpath}): arrival distance denominator is not positive")]
    GeometryInvalid { path: usize, subpath: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("quantizer scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("code {value} does not fit the quantizer range [0, {max}]")]
    ValueOutOfRange { value: u32, max: u32 },
    #[error("forward tape does not match the supplied tensors")]
    TapeMismatch,
    #[error("reference signal has zero energy")]
    ZeroReference,
    #[error("sample count must be at least 1")]
    InvalidCount,
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}

pub(crate) fn ensure_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

pub(crate) fn ensure_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
