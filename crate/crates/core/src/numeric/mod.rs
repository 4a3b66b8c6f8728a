//! Dense tensors, a reverse-mode gradient tape, and gradient verification.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Grads, Tape, Var};
pub use tensor::{Real, Tensor};

pub(crate) use tensor::dot;
