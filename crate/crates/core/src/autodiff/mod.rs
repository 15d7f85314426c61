//! Minimal dense-tensor engine: reverse-mode tape, finite-difference
//! checker, momentum SGD, and binary checkpoints.

pub mod checkpoint;
mod gradcheck;
mod params;
mod sgd;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Bound, ParamId, ParamStore};
pub use sgd::Sgd;
pub use tape::{Gradients, PoolAxis, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
