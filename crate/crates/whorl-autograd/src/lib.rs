//! Dense-tensor numerics with reverse-mode differentiation.
//!
//! The crate is deliberately small: row-major `f64` tensors, a reverse-mode
//! graph recorded by the ops themselves, `Parameter` leaves that collect
//! gradients, an Adam optimizer, and a binary checkpoint format. It exists so
//! the rest of the workspace can train conv and attention models without
//! pulling in a tensor framework.
//!
//! Tensors are immutable once built. Every op that consumes a tensor with
//! `requires_grad` records itself in the output, and [`backward`] replays the
//! graph in reverse topological order, accumulating into each parameter's
//! gradient buffer. Calling [`backward`] twice without zeroing grads therefore
//! accumulates twice, which is what gradient-accumulation training loops rely
//! on.

pub mod checkpoint;
pub mod optim;
mod ops;
mod param;
mod tensor;
pub mod testing;

pub use optim::{Adam, AdamConfig};
pub use param::{normal, Param, Parameter};
pub use tensor::{backward, Tensor};

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row norms below this are clamped before division in `normalize_rows`.
pub const NORM_EPS: f64 = 1e-12;

/// Inputs to `ln` are clamped to at least this value to keep the result finite.
pub const LN_FLOOR: f64 = 1e-300;

/// Cosines are clamped to `[-1 + this, 1 - this]` before the additive angular
/// margin so the derivative stays bounded.
pub const COS_CLAMP: f64 = 1e-7;
