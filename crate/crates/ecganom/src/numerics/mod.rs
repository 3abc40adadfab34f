//! Tensor math, reverse-mode autodiff, parameter containers, and optimizers.

pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use optim::{AdamWConfig, AdamWState, LrSchedule};
pub use params::{trunc_normal, ParamSet, ParamVars};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
