//! Statevector-simulated hybrid quantum classification heads for frozen
//! sentence embeddings, with noise-aware training, classical baselines and
//! a QPU/GPU inference energy estimator.

pub mod ansatz;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod grad;
pub mod head;
pub mod noise;
pub mod rng;
pub mod simcore;
pub mod trainer;

pub use error::{Error, Result};
