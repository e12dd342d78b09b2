//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Values are plain [`Tensor`]s. Differentiable computation is recorded on a
//! [`Tape`] through [`Var`] handles; trainable state lives in a
//! [`ParamStore`] and is copied onto the tape at the start of each forward
//! pass. Gradients are first order only and accumulate into the store until
//! [`ParamStore::zero_grad`] is called.

mod array;
pub mod checkpoint;
mod param;
mod tape;

pub use array::{Precision, Tensor};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{gelu, Activation, Gradients, Tape, Var};

#[allow(unused_imports)]
pub(crate) use array::{contiguous_strides, walk2};
