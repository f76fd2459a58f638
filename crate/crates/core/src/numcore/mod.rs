//! Dense tensors, a small reverse-mode tape, named parameter storage and
//! finite-difference gradient verification.

mod gradcheck;
mod graph;
mod ops;
mod params;
mod tensor;

pub use gradcheck::{
    check_tiny_model, compare_gradients, finite_difference_gradient, gradient_check,
    relative_error, tiny_instance, BlockReport, GradCheckReport, DEFAULT_EPS,
};
pub use graph::{cosine, Graph, NodeId, PROB_CLAMP};
pub use ops::{sigmoid, softmax};
pub use params::{Gradients, ParamStore};
pub use tensor::{Real, Tensor};
