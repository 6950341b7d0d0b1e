pub mod autodiff;
pub mod error;
pub mod json;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod runner;
pub mod synthcp;

pub use autodiff::{Gradient, Graph, NodeId, Tensor};
pub use error::{Error, Result};
