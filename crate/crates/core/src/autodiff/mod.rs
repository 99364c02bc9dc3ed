//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod tape;
mod tensor;

pub use tape::{Binary, Gradients, Tape, Unary, Var, LAYERNORM_EPS};
pub use tensor::{grad_sq_norm, Parameter, Tensor};
