//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is rebuilt for every forward pass. Leaves created with
//! [`Graph::param`] accumulate gradients across [`Graph::backward`] calls;
//! leaves created with [`Graph::constant`] never do. Heavy operations that do
//! not decompose nicely into the built-in op set (rasterization, SSIM, the flow
//! loss) plug in through the [`Function`] trait with a hand-written backward.

mod conv;
mod graph;
mod ops;
mod tensor;

pub use graph::{Function, Graph, Var};
pub use ops::{BinaryOp, UnaryOp};
pub use tensor::Tensor;
