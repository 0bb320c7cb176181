use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic in {path}: expected \"DNIT\"")]
    BadMagic { path: PathBuf },
    #[error("unsupported version {version} or dtype {dtype} in {path}")]
    Unsupported { path: PathBuf, version: u8, dtype: u8 },
    #[error("truncated file {path}: expected {expected} payload bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("dims product mismatch in {path}: header declares {declared} values, payload holds {found}")]
    DimsMismatch {
        path: PathBuf,
        declared: usize,
        found: usize,
    },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid dims {0:?}: every dimension must be positive")]
    ZeroDim([usize; 4]),
    #[error("data length {len} does not match dims {dims:?}")]
    LengthMismatch { dims: [usize; 4], len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("complex residual {residual:e} exceeds tolerance {tolerance:e}")]
    ComplexResidual { residual: f64, tolerance: f64 },
    #[error("degenerate spectrum in channel {channel}")]
    DegenerateSpectrum { channel: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("empty partition: no cells {0} the mask")]
    EmptyPartition(&'static str),
    #[error("degenerate band: zero variance")]
    DegenerateBand,
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("nothing to edit: source and target prompts are identical")]
    NothingToEdit,
    #[error("unknown word {0:?}")]
    UnknownWord(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
