//! Tensors, a small set of differentiable primitives, and reverse-mode
//! gradients (including gradients of gradients).

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod tensor;

pub use gradcheck::{check_gradients, check_gradients_with, GradCheckOptions, GradReport};
pub use graph::{Graph, Var};
pub use kernels::PadMode;
pub use layers::Padding;
pub use params::{Bound, Param, ParamId, ParamSet};
pub use tensor::{Real, Tensor};
