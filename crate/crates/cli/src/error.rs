use std::path::{Path, PathBuf};

use netstab_core::Error as CoreError;
use thiserror::Error;

use crate::config::ConfigError;
use crate::manifest::ManifestError;
use crate::spectrum_csv::SpectrumCsvError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Key { key: String, message: String },
    #[error("{}: {source}", path.display())]
    ConfigFile { path: PathBuf, source: ConfigError },
    #[error("{}: {source}", path.display())]
    Manifest {
        path: PathBuf,
        source: ManifestError,
    },
    #[error("{}: {source}", path.display())]
    Spectrum {
        path: PathBuf,
        source: SpectrumCsvError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn key(key: &str, message: impl Into<String>) -> Self {
        CliError::Key {
            key: key.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for anything the user can fix through the configuration, 1 for
    /// internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Key { .. }
            | CliError::ConfigFile { .. }
            | CliError::Manifest { .. }
            | CliError::Spectrum { .. } => 2,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                CoreError::Shape(_)
                | CoreError::InvalidParameter(_)
                | CoreError::Diverged { .. }
                | CoreError::Degenerate { .. }
                | CoreError::NotStabilizable
                | CoreError::NoUnstableDirections => 2,
                CoreError::NoConvergence { .. }
                | CoreError::Singular(_)
                | CoreError::Unbounded { .. } => 1,
            },
        }
    }
}
