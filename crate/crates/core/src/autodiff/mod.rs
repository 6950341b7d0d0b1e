//! Reverse-mode automatic differentiation with support for differentiating
//! gradients again (double backprop).

mod graph;
mod tensor;

pub use graph::{Gradient, Graph, Node, NodeId, Op};
pub use tensor::{Shape, Tensor};
