//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod kernels;
pub mod layers;
mod params;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_inputs, relative_error, roundoff_floor, GradCheckOptions,
    GradCheckReport, REL_EPS,
};
pub use params::{init_embedding, init_weight, Bound, ParamId, ParamStore};
pub use rng::{RngAlgorithm, RngSnapshot, RngState};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Epsilon inside every layer normalization of the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
