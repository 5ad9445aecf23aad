//! Tensor algebra, reverse-mode gradients, Adam, gradient checking and
//! parameter serialization shared by both models.

mod adam;
mod gradcheck;
mod graph;
pub mod io;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{central_difference, finite_diff_check, GradCheckReport};
pub use graph::{bce_logit, sigmoid, Gradients, Graph, Var};
pub use params::{GradBuffer, ParamId, ParamSet};
pub use tensor::{dot, Tensor};
