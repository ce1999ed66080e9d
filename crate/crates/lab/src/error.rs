use std::path::{Path, PathBuf};

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: malformed file: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] edl_core::Error),
}

impl LabError {
    pub fn config(msg: impl Into<String>) -> Self {
        LabError::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        LabError::Format { path: path.to_path_buf(), message: message.into() }
    }

    /// 2 for anything the user can fix in the configuration or inputs,
    /// 3 for numeric failures during a run, 1 for file-system trouble.
    pub fn exit_code(&self) -> i32 {
        use edl_core::Error as E;
        match self {
            LabError::Config(_) | LabError::Format { .. } => 2,
            LabError::Io { .. } => 1,
            LabError::Core(e) => match e {
                E::Config(_) | E::InsufficientData(_) | E::ClassOutOfRange { .. } => 2,
                _ => 3,
            },
        }
    }
}
