//! Dense `f64` tensors with a reverse-mode tape, special functions, seeded
//! sampling, Adam and a named-tensor checkpoint container.

pub mod checkpoint;
pub mod optim;
pub mod rng;
pub mod special;
pub mod tape;
pub mod tensor;

pub use optim::{Adam, AdamConfig, Bound, Param, ParamStore};
pub use rng::Rng;
pub use tape::{Gradients, Reduction, Tape, Var};
pub use tensor::Tensor;
