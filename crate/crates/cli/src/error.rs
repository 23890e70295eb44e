use stokes_core::StokesError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] StokesError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("run failed: {0}")]
    Run(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Configuration problems exit with 2, failures during a run with 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Core(_) | Self::Io { .. } => 2,
            Self::Run(_) => 1,
        }
    }
}
