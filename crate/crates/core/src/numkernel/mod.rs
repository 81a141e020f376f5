//! Dense real64 linear algebra, reverse-mode differentiation and AdamW.

mod adamw;
mod tape;
mod tensor;

pub use adamw::{AdamWConfig, AdamWState, Param};
pub use tape::{finite_difference, max_relative_error, Gradients, Tape, Var};
pub use tensor::{cosine, dot, log_sum_exp, matmul, norm, softmax, Tensor2};
