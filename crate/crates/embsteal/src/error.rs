use std::path::PathBuf;

use embsteal_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERIC: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> AppError {
        let path = path.into();
        move |source| AppError::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => exit::CONFIG,
            AppError::Data(_) | AppError::Io { .. } => exit::DATA,
            AppError::Numeric(_) => exit::NUMERIC,
            AppError::Transport(_) => exit::FAILURE,
            AppError::Core(e) => match e {
                CoreError::NonFinite { .. } | CoreError::ZeroNorm => exit::NUMERIC,
                CoreError::InvalidArgument(_) | CoreError::IncompatiblePairing(_) => exit::CONFIG,
                _ => exit::DATA,
            },
        }
    }
}
