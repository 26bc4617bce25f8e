use std::path::{Path, PathBuf};

use hamnet_core::data::IdxError;

use crate::model_file::ModelFileError;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{}:{line}: {msg}", path.display())]
    Spec { path: PathBuf, line: usize, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}: {msg}", path.display())]
    Data { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Idx {
        path: PathBuf,
        #[source]
        source: IdxError,
    },
    #[error("{}: {source}", path.display())]
    ModelFile {
        path: PathBuf,
        #[source]
        source: ModelFileError,
    },
    #[error("{failed} of {total} grid cells failed")]
    GridFailures { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] hamnet_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if is_numerical(e) => 2,
            CliError::GridFailures { .. } => 2,
            _ => 1,
        }
    }
}

pub fn is_numerical(e: &hamnet_core::Error) -> bool {
    use hamnet_core::Error as E;
    matches!(
        e,
        E::NonFinite { .. } | E::NonFiniteState { .. } | E::Diverged { .. } | E::NoConvergence { .. }
    )
}
