//! Numeric foundation: dense tensors, a reverse-mode tape, and seeded
//! random streams.

pub mod rng;
pub mod tape;
pub mod tensor;

pub use rng::RngStream;
pub use tape::{hessian_fd, per_sample_grads, value_and_grad, value_and_grad_in, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
