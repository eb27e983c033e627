//! Static and dynamic graph learning for multivariate time-series
//! forecasting.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: a small reverse-mode autodiff engine over `f64` tensors.
//! - [`graph_static`], [`graph_dynamic`]: learned adjacency matrices.
//! - [`temporal_conv`], [`graph_conv`]: the feature extractors.
//! - [`model`]: network assembly, training, checkpoints.
//! - [`data`]: ingestion, windowing, metrics and a planted-graph generator.

pub mod data;
pub mod error;
pub mod graph_conv;
pub mod graph_dynamic;
pub mod graph_static;
pub mod model;
pub mod numerics;
pub mod temporal_conv;

pub use error::{Error, Result};
pub use numerics::{Tape, Tensor, Var};
