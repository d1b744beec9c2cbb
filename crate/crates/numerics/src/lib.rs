//! Numeric substrate for the multimodal language model.
//!
//! Everything here is plain CPU code over `f64` buffers. Reductions always
//! run in a fixed left-to-right order so identical inputs give bitwise
//! identical outputs. [`Precision::Single`] rounds every stored value to the
//! nearest `f32`, which is how single-precision runs are emulated;
//! [`Precision::Double`] keeps full `f64` and is what gradient checks use.

pub mod autograd;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod tensor;

mod error;

pub use autograd::{Gradients, ParamId, ParamStore, Tape, Var};
pub use error::{NumericsError, Result};
pub use tensor::{Precision, Tensor};
