//! Dense matrices, a reverse-mode tape, and the network blocks built on them.

mod gradcheck;
mod nn;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use nn::{init_uniform, positional_encoding, Activation, Linear, Mlp, MultiHeadAttention, Readout, MASKED};
pub use params::{Adam, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
