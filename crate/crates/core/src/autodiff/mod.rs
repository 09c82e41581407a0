//! Minimal reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Tape`] is built fresh for every forward pass. Parameters live in a
//! [`ParamStore`] outside the tape and are bound as leaves by name; after
//! [`Tape::backward`] the per-name gradients feed [`AdamState::step`].

mod adam;
mod error;
pub mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{AutodiffError, Result};
pub use ops::OpKind;
pub use params::ParamStore;
pub use tape::{DiffTensor, Gradients, NodeId, ParamGrads, Tape};
pub use tensor::Tensor;

pub(crate) use ops::sigmoid;
