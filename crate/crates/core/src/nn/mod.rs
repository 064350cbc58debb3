//! Small f64 autodiff engine and transformer layers shared by both models.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod lamb;
pub mod layers;
mod tensor;

pub use graph::{bce_term, log_sum_exp, sigmoid, Gradients, Graph, Var};
pub use lamb::{Lamb, LambConfig};
pub use tensor::{ModelConfig, ParamId, ParameterStore, TensorValue};
