use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch { what: &'static str, expected: usize, actual: usize },

    #[error("index {index} out of range for padded domain of size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("negative shrinkage threshold {0}")]
    NegativeThreshold(f64),

    #[error("objective became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error(
        "majorizer failed the descent inequality on block {block} at iteration {iteration}: \
         surrogate {surrogate:.17e} < value {value:.17e}"
    )]
    MajorizationViolated { block: usize, iteration: usize, value: f64, surrogate: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, actual })
    }
}
