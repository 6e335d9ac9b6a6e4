//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Only the operations the descriptor network and the training losses need
//! are provided. Anything else (voxelization, the weighted affine fit, the
//! alignment losses) enters the tape through [`CustomOp`].

mod adam;
mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_sampled, relative_error};
pub use tape::{softmax_neg, CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
