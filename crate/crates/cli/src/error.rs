use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Validation(String),

    #[error("missing output of stage `{stage}` ({}); run `gwhi --stage {stage}` first", path.display())]
    MissingStage { stage: &'static str, path: PathBuf },

    #[error(transparent)]
    Core(#[from] gwhi_core::Error),

    #[error(transparent)]
    Models(#[from] gwhi_models::Error),

    #[error("thread pool: {0}")]
    Pool(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// 1 for bad configuration or missing inputs, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use gwhi_core::Error as C;
        match self {
            Error::Validation(_) | Error::MissingStage { .. } => 1,
            Error::Core(C::Config(_) | C::Parse { .. }) => 1,
            _ => 2,
        }
    }
}
