use crate::arch::ArchError;
use crate::data::DataError;
use crate::engine::EngineError;
use crate::metrics::MetricsError;
use crate::spectral::SpectralError;
use crate::train::{CheckpointError, TrainError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class; the command-line tool maps it to an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad flags, configs or invalid requests.
    Usage,
    /// Unreadable, malformed or mismatched files and datasets.
    Data,
    /// Non-finite values or failed gradient checks.
    Numerical,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 1,
            ErrorCategory::Data => 2,
            ErrorCategory::Numerical => 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
}

fn engine_category(e: &EngineError) -> ErrorCategory {
    match e {
        EngineError::NonFinite { .. } => ErrorCategory::Numerical,
        _ => ErrorCategory::Usage,
    }
}

fn arch_category(e: &ArchError) -> ErrorCategory {
    match e {
        ArchError::Engine(e) => engine_category(e),
        ArchError::IndivisibleInput { .. }
        | ArchError::InputChannels { .. }
        | ArchError::ParameterShape { .. } => ErrorCategory::Data,
        _ => ErrorCategory::Usage,
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Spectral(SpectralError::NonFinite { .. }) => ErrorCategory::Numerical,
            Error::Spectral(_) => ErrorCategory::Usage,
            Error::Engine(e) => engine_category(e),
            Error::Arch(e) => arch_category(e),
            Error::Metrics(MetricsError::NonFinite) => ErrorCategory::Numerical,
            Error::Metrics(_) => ErrorCategory::Data,
            Error::Data(DataError::InvalidConfig(_)) => ErrorCategory::Usage,
            Error::Data(_) => ErrorCategory::Data,
            Error::Train(e) => match e {
                TrainError::NonFiniteLoss { .. } => ErrorCategory::Numerical,
                TrainError::InvalidConfig(_) => ErrorCategory::Usage,
                TrainError::Arch(a) => arch_category(a),
                TrainError::Engine(e) => engine_category(e),
                TrainError::Metrics(MetricsError::NonFinite) => ErrorCategory::Numerical,
                _ => ErrorCategory::Data,
            },
            Error::Checkpoint(_) | Error::Io { .. } => ErrorCategory::Data,
            Error::Usage(_) => ErrorCategory::Usage,
            Error::Numerical(_) => ErrorCategory::Numerical,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.category().exit_code()
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
