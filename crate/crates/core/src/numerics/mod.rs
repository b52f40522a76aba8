//! Dense tensors, a gradient tape, and gradient verification.

mod gradcheck;
pub mod rng;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_where, Coverage, GradCheckReport, ParamCheck};
pub use tape::{AttnGroup, Grads, ParamId, ParamStore, Tape, Var};
pub use tensor::{BitRepr, Real, Tensor};

