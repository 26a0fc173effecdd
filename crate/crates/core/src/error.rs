use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("radius {radius:.6} lies beyond the invertible range (max {limit:.6})")]
    NonInvertible { radius: f64, limit: f64 },

    #[error("radial inversion did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parameter sampling exhausted after {attempts} attempts")]
    SamplingExhausted { attempts: usize },

    #[error("no image sequences found in {}", .0.display())]
    EmptySource(PathBuf),

    #[error("i/o failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("optimizer made no progress from its initial point")]
    NoProgress,

    #[error("no valid pixels in the region of interest")]
    EmptyValidRegion,

    #[error("first weight {a1} outside the admissible open interval ({lo}, {hi}) for n = {n}")]
    InvalidWeightRange { n: usize, a1: f64, lo: f64, hi: f64 },

    #[error("combined parameters fail the monotonicity guard")]
    MonotonicityViolation,

    #[error("camera path has {len} samples, at least {min} required")]
    PathTooShort { len: usize, min: usize },

    #[error("transform fit is rank deficient")]
    DegenerateFit,

    #[error("bad .flo magic in {}", .0.display())]
    BadMagic(PathBuf),

    #[error("truncated file {}", .0.display())]
    TruncatedFile(PathBuf),

    #[error("flow dimensions {width}x{height} exceed the format limit")]
    DimensionOverflow { width: usize, height: usize },

    #[error("unsupported image format: {}", .0.display())]
    UnsupportedFormat(PathBuf),

    #[error("corrupt file {}: {reason}", path.display())]
    CorruptFile { path: PathBuf, reason: String },

    #[error("json error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem or file contents.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::EmptySource(_)
                | Error::BadMagic(_)
                | Error::TruncatedFile(_)
                | Error::UnsupportedFormat(_)
                | Error::CorruptFile { .. }
                | Error::Json { .. }
        )
    }
}
