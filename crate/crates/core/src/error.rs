use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (asymmetry {asymmetry:e} exceeds {tolerance:e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("SLMX format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate landmark region `{0}`: total soft weight below 1e-9")]
    DegenerateLandmark(&'static str),

    #[error("cannot normalize a zero identity feature vector")]
    ZeroNormalization,

    #[error("unknown classifier `{0}`")]
    UnknownClassifier(String),

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("empty landmark selection")]
    EmptySelection,

    #[error("degenerate triangulation: {0}")]
    Degenerate(String),

    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty intersection at stage `{stage}` (activate eps {activate_eps}, stage eps {stage_eps})")]
    EmptyIntersection {
        stage: String,
        activate_eps: f64,
        stage_eps: f64,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }
}

pub(crate) fn ensure_len(context: &'static str, expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::dims(context, expected, v.len()));
    }
    Ok(())
}

pub(crate) fn ensure_finite(context: &str, v: &[f64]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{context} (entry {i})")));
    }
    Ok(())
}
