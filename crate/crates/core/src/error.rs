use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("codebook of {entries} complex entries exceeds the cap of {cap}")]
    SizeOverflow { entries: u128, cap: u128 },
    #[error("LDPC construction failed after {attempts} attempts: {reason}")]
    ConstructionFailed { attempts: usize, reason: String },
    #[error("QPSK mapping needs an even number of bits, got {0}")]
    OddLength(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("covariance block is not positive definite even after regularisation")]
    SingularCovariance,
    #[error("window {t} of {bp} bits at stride {b0} runs past a {len}-bit message")]
    WindowOutOfRange { t: usize, bp: usize, b0: usize, len: usize },
    #[error("overlap mismatch between window {0} and window {1}")]
    OverlapMismatch(usize, usize),
    #[error("ambiguous splice: {0} parents share the overlap")]
    AmbiguousSplice(usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
