use std::path::{Path, PathBuf};

use thiserror::Error;

/// Command failure, classified by the process exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: vmf_gos::Error },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub const EXIT_CONFIG: i32 = 2;
    pub const EXIT_IO: i32 = 3;
    pub const EXIT_NUMERIC: i32 = 4;

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => Self::EXIT_CONFIG,
            CliError::Io { .. } => Self::EXIT_IO,
            CliError::Numeric(_) => Self::EXIT_NUMERIC,
        }
    }

    pub fn io(path: &Path, source: impl Into<vmf_gos::Error>) -> Self {
        CliError::Io { path: path.to_path_buf(), source: source.into() }
    }
}

impl From<vmf_gos::Error> for CliError {
    fn from(e: vmf_gos::Error) -> Self {
        use vmf_gos::Error as E;
        match e {
            E::Spec(_) | E::Recipe(_) | E::Domain(_) | E::Shape { .. } => CliError::Config(e.to_string()),
            E::Degenerate(_) | E::Saturated { .. } | E::TangentRetry(_) | E::Numeric(_) => {
                CliError::Numeric(e.to_string())
            }
            E::Version { .. } | E::Checksum { .. } | E::Truncated { .. } | E::Format(_) | E::Io(_) => {
                CliError::Io { path: PathBuf::new(), source: e }
            }
        }
    }
}

/// Tags any failure while touching `path` as an I/O error.
pub(crate) trait AtPath<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T> AtPath<T> for vmf_gos::Result<T> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| CliError::io(path, e))
    }
}

impl<T> AtPath<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| CliError::io(path, e))
    }
}
