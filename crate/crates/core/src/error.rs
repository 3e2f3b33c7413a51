use std::fmt;

/// Errors raised by the library.
///
/// Variants split into input problems (bad configuration, malformed data,
/// points outside the mesh) and numerical failures (indefinite matrices,
/// optimizer breakdown). [`Error::is_numerical`] tells them apart.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("point {index} at ({x}, {y}) lies outside the mesh")]
    OutOfDomain { index: usize, x: f64, y: f64 },

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("mesh would need {requested} vertices, above the cap of {cap}")]
    MeshTooLarge { requested: usize, cap: usize },

    #[error("time indices are misaligned between sources: {0}")]
    TimeMisaligned(String),

    #[error("empty observation set: {0}")]
    EmptyObservations(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("ensemble member alpha1 = {alpha1} failed: {source}")]
    MemberFailed {
        alpha1: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },
}

impl Error {
    pub fn invalid(msg: impl fmt::Display) -> Self {
        Error::Invalid(msg.to_string())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. } | Error::Numerical(_) => true,
            Error::MemberFailed { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
