use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{context}: {source}")]
    Numerical {
        context: String,
        source: ssm_inla::Error,
    },

    #[error("{0}")]
    Io(String),

    #[error("{0}")]
    Acceptance(String),
}

impl CliError {
    /// 0 success, 1 usage, 2 numerical failure, 3 acceptance failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Numerical { .. } => 2,
            CliError::Acceptance(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Attaches `context` to a library error. Input problems map to usage
/// errors; everything else is a numerical failure.
pub trait Context<T> {
    fn context(self, context: impl Into<String>) -> CliResult<T>;
}

impl<T> Context<T> for ssm_inla::Result<T> {
    fn context(self, context: impl Into<String>) -> CliResult<T> {
        use ssm_inla::Error as E;
        self.map_err(|e| match e {
            E::InvalidConfig(_) | E::InvalidDataset(_) | E::InvalidHyperParams(_) | E::InvalidInit(_) | E::NegativeCount(_) | E::Io(_) => {
                CliError::Usage(format!("{}: {e}", context.into()))
            }
            source => CliError::Numerical {
                context: context.into(),
                source,
            },
        })
    }
}
