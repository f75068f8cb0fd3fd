use thiserror::Error;

use crate::channels::ChannelError;
use crate::experiments::ExperimentError;
use crate::lindblad::LindbladError;
use crate::oracle::OracleError;
use crate::state::StateError;
use crate::tensor::TensorError;

/// Any failure raised by this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    State(#[from] StateError),

    #[error(transparent)]
    Channel(#[from] ChannelError),

    #[error(transparent)]
    Lindblad(#[from] LindbladError),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}
