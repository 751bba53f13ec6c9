//! Dense tensors, a reverse-mode tape and a finite-difference checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_fn, Coverage, GradCheckReport};
pub use params::ParamStore;
pub use tape::{sigmoid, Gradients, ParamId, Tape, Var};
pub use tensor::{matmul, Tensor};
