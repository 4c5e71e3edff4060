use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] mmc_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit status: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use mmc_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io { .. } | CliError::Csv(_) => 4,
            CliError::Core(e) => match e {
                E::Io(_) | E::Checkpoint(_) => 4,
                E::InvalidArgument { .. } | E::Empty(_) | E::MissingClass(_) => 2,
                _ => 3,
            },
        }
    }
}
