use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Load {
        path: PathBuf,
        #[source]
        source: proxattack::Error,
    },

    #[error(transparent)]
    Core(#[from] proxattack::Error),

    #[error("{0}")]
    Tolerance(String),

    #[error("serialisation failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 0 ok, 1 internal failure or tolerance breach, 2 configuration, 3 IO.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Load { source, .. } | CliError::Core(source) => core_code(source),
            CliError::Tolerance(_) | CliError::Json(_) => 1,
        }
    }
}

fn core_code(e: &proxattack::Error) -> u8 {
    use proxattack::Error as E;
    match e {
        E::Io(_) | E::Format(_) | E::PayloadMismatch { .. } => 3,
        E::InvalidArgument(_) | E::ShapeMismatch { .. } => 2,
        E::Model(_) | E::Numerical(_) | E::DegenerateLogits | E::NonFinite { .. } => 1,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches `path` to a core error.
pub fn at<T>(path: impl Into<PathBuf>, r: proxattack::Result<T>) -> CliResult<T> {
    r.map_err(|source| CliError::Load {
        path: path.into(),
        source,
    })
}

pub fn io_at<T>(path: impl Into<PathBuf>, r: std::io::Result<T>) -> CliResult<T> {
    r.map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}
