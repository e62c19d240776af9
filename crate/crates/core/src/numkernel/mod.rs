//! Numeric kernel: tensors, reverse-mode graphs, Adam and seeded sampling.

pub mod adam;
pub mod graph;
pub mod rng;
pub mod tensor;

pub use adam::AdamState;
pub use graph::{forward_backward, Gradients, Graph, Var, STANDARDIZE_EPS};
pub use rng::Rng;
pub use tensor::{kernel, Tensor};
pub mod params;
pub use params::ParamSet;
