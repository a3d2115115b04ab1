use std::fmt;

/// Pipeline stage a failure belongs to; fixes the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Training,
    ControlLoop,
}

impl Stage {
    pub fn exit_code(self) -> u8 {
        match self {
            Stage::Config => 2,
            Stage::Data => 3,
            Stage::Training => 4,
            Stage::ControlLoop => 5,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub stage: Stage,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(stage: Stage, error: anyhow::Error) -> Self {
        Self { stage, error }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for CliError {}

pub trait StageExt<T> {
    fn with_stage<C: fmt::Display + Send + Sync + 'static>(
        self,
        stage: Stage,
        context: impl FnOnce() -> C,
    ) -> Result<T, CliError>;

    fn stage(self, stage: Stage) -> Result<T, CliError>;
}

impl<T, E> StageExt<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn with_stage<C: fmt::Display + Send + Sync + 'static>(
        self,
        stage: Stage,
        context: impl FnOnce() -> C,
    ) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(stage, e.into().context(context())))
    }

    fn stage(self, stage: Stage) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(stage, e.into()))
    }
}
