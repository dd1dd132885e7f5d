use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage {stage}: missing input {}", path.display())]
    MissingInput { stage: &'static str, path: PathBuf },

    #[error("stage {stage} failed: {message}")]
    StageFailure { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::MissingInput { .. } => 4,
            CliError::StageFailure { .. } => 5,
        }
    }

    pub fn stage(stage: &'static str) -> impl Fn(ovpath_core::Error) -> CliError {
        move |e| CliError::StageFailure { stage, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;
