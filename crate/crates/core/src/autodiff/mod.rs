//! Reverse-mode automatic differentiation over small dense tensors.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, TensorCheck, DEVIATION_FLOOR};
pub use graph::{Gradients, Graph, OpKind, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

