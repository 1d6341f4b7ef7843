use std::path::PathBuf;

/// Everything that ends a run early, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("cannot read manifest {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("invalid manifest: {0}")]
    Manifest(#[from] toml::de::Error),

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error("computation failed: {0}")]
    Core(schottky_core::Error),

    #[error("threshold failure: {0}")]
    Threshold(String),
}

impl From<schottky_core::Error> for CliError {
    fn from(e: schottky_core::Error) -> Self {
        use schottky_core::Error as E;
        match e {
            // malformed inputs are the caller's fault, not a failed criterion
            E::Domain(m) => CliError::Usage(m),
            E::Dimension { expected, got } => CliError::Usage(format!("dimension mismatch: expected {expected}, got {got}")),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Read { .. } | CliError::Manifest(_) => 2,
            CliError::Write { .. } | CliError::Core(_) | CliError::Threshold(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
