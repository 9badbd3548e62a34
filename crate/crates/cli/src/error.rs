use std::path::{Path, PathBuf};

use stark_magic::ErrorClass;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const RESOURCE: i32 = 3;
    pub const CONVERGENCE: i32 = 4;
    pub const SINGULARITY: i32 = 5;
    pub const LOCKED: i32 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] stark_magic::Error),

    #[error("configuration error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("output directory {dir} is in use by another run (delete {lock} if it is stale)")]
    Locked { dir: PathBuf, lock: PathBuf },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn schema(path: &str, message: impl Into<String>) -> Self {
        CliError::Schema {
            path: path.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => exit::CONFIG,
                ErrorClass::Resource => exit::RESOURCE,
                ErrorClass::Convergence => exit::CONVERGENCE,
                ErrorClass::Singularity => exit::SINGULARITY,
                ErrorClass::Other => exit::OTHER,
            },
            CliError::Schema { .. } => exit::CONFIG,
            CliError::Locked { .. } => exit::LOCKED,
            CliError::Io { .. } => exit::OTHER,
        }
    }
}
