//! Skeleton-based fall detection with a three-stream spatial-temporal graph
//! convolutional network.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`skeleton`]: layouts, sequence files, manifests, windowing,
//!   normalization and stratified splits
//! - [`graph`]: skeleton graph and normalized adjacency
//! - [`autodiff`]: a small reverse-mode tensor engine with gradient checking,
//!   momentum SGD and checkpoints
//! - [`layers`]: spatial graph convolution, separable temporal convolution
//!   and the GSTCN block
//! - [`model`]: the three-stream network and its parameter/FLOP accounting
//! - [`train`], [`metrics`], [`bench`]: training, evaluation, reports and
//!   latency comparison
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod archive;
pub mod audit;
pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod config;
mod error;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod skeleton;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
