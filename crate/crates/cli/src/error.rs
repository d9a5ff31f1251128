use std::path::PathBuf;

use thiserror::Error;

/// Failures of a subcommand, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Integrator(String),

    #[error("{0}")]
    Tolerance(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Integrator(_) => 3,
            CliError::Tolerance(_) => 4,
            CliError::Io { .. } | CliError::Other(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<qno_core::Error> for CliError {
    fn from(e: qno_core::Error) -> Self {
        use qno_core::Error as E;
        match e {
            E::InvalidParameter(_) | E::Truncation { .. } | E::Dimension { .. } | E::OverDamped { .. } => {
                CliError::Validation(e.to_string())
            }
            E::Unstable { .. } | E::Quadrature { .. } => CliError::Integrator(e.to_string()),
            E::Fit(_) | E::NoPeaks | E::BumpsUnresolved(_) => CliError::Other(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
