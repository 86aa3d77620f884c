//! Deep embedding clustering driven by sample stability.
//!
//! The crate provides the stability objective and its analytic gradients,
//! a dense autoencoder with manual backpropagation, the joint training
//! loop, clustering evaluation metrics, and dataset I/O.

pub mod autoencoder;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod grad;
pub mod kmeans;
pub mod metrics;
pub mod optim;
pub mod stability;
pub mod trainer;

pub use error::{Error, Result};
