use thiserror::Error;

/// Errors raised by the solver library.
///
/// Each variant belongs to one of the exit-code classes used by the CLI
/// (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("non-finite particle coordinate {value} on axis {axis}")]
    CorruptedPosition { axis: usize, value: f64 },

    #[error("solver blow-up at step {step}: {reason}")]
    Blowup { step: usize, reason: String },

    #[error("population explosion at step {step}: {count} particles exceeds cap {cap}")]
    PopulationExplosion { step: usize, count: usize, cap: usize },

    #[error("density is pathological: {0}")]
    PathologicalDensity(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 config, 3 model, 4 runtime blow-up, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 2,
            Error::Model(_) | Error::PathologicalDensity(_) => 3,
            Error::CorruptedPosition { .. } | Error::Blowup { .. } | Error::PopulationExplosion { .. } => 4,
            Error::Io { .. } => 5,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
