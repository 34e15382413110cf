//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s; calling
//! [`Var::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of every trainable leaf. Graphs are cheap and meant to be
//! rebuilt for each forward pass.

mod graph;
mod kernels;
mod tensor;

pub use graph::{CustomOp, Gradients, Graph, Var};
pub use tensor::Tensor;
