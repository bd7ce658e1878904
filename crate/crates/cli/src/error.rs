use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{0}")]
    Missing(String),
    #[error("workspace {0} is locked by another run (remove the lock file if it is stale)")]
    Locked(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: regionbow::Error,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 configuration, 3 data, 4 convergence.
    pub fn exit_code(&self) -> i32 {
        use regionbow::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core { source, .. } => match source {
                E::InvalidConfig(_) | E::InvalidFeatureCombo(_) => 2,
                E::NonConvergence { .. } => 4,
                _ => 3,
            },
            CliError::Missing(_) | CliError::Locked(_) | CliError::Io { .. } => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }
}

pub(crate) trait Context<T> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, regionbow::Error> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| CliError::Core { context: ctx(), source })
    }
}

impl<T> Context<T> for std::result::Result<T, std::io::Error> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| CliError::Io { context: ctx(), source })
    }
}
