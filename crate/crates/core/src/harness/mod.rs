//! Everything around the math: synthetic data, the toy network, training and
//! evaluation loops, on-disk formats and attention export.

pub mod config;
pub mod data;
pub mod export;
pub mod model;
pub mod tensor_file;
pub mod train;

use std::path::PathBuf;

use crate::cp::CpError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Cp(#[from] CpError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("tensor file: {0}")]
    Format(String),
    #[error("tensor file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("model has no PFA site")]
    NoPfaSite,
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("dataset is empty")]
    EmptyDataset,
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
