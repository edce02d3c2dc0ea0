//! Dense tensors, a reverse-mode tape, layers and SGD.

mod gemm;
pub mod gradcheck;
pub mod nn;
pub mod optim;
mod tape;
mod tensor;

pub use nn::{Linear, LinearVars, Mlp};
pub use optim::{sgd_step, Param, ParamGroup};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
