//! Dense kernels, reverse-mode tape and gradient checking.

pub mod gradcheck;
pub mod ops;
mod real;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params};
pub use ops::{layer_norm, softmax_stable};
pub use real::{gemm, Real};
pub use tape::{GradTape, Gradients, Var};
pub use tensor::Tensor;
