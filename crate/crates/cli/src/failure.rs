use grace_core::Error;

/// A command failure, classified by the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error("output error: {0}")]
    Output(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Output(_) => 1,
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
            Failure::GradCheck(_) => 5,
        }
    }

    pub fn output(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Failure::Output(format!("{}: {e}", path.display()))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { ref dump, .. } => Failure::Numeric(format!("{e}\n{dump:#}")),
            e if e.is_numeric() => Failure::Numeric(e.to_string()),
            Error::Parse { .. }
            | Error::Format(_)
            | Error::Io { .. }
            | Error::Dimension(_)
            | Error::SingleClass
            | Error::EmptyEvaluationSet => Failure::Data(e.to_string()),
            e => Failure::Config(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;
