//! Tri-plane multi-view density-map counting.
//!
//! Per-view features from a shared dilated FCN are warped onto ground,
//! front and side planes, fused across views and decoded into a
//! ground-plane density map whose sum is the object count.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod dataset;
pub mod density;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod optim;
pub mod sampler;
pub mod simulator;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
