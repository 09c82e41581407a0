//! Named-parameter layer helpers shared by the encoders and fusion heads.
//!
//! A linear layer `name` owns `name.w` of shape `(in, out)` and `name.b` of
//! shape `(out)`; a layer norm owns `name.g` and `name.b`.

use crate::autodiff::{ParamStore, Result, Tape};
use crate::autodiff::NodeId;
use crate::rng::SplitMix64;

pub fn init_linear(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut SplitMix64) {
    store.init_glorot(&format!("{name}.w"), fan_in, fan_out, rng);
    store.init_const(&format!("{name}.b"), &[fan_out], 0.0);
}

pub fn linear(tape: &mut Tape, store: &ParamStore, name: &str, x: NodeId) -> Result<NodeId> {
    let w = tape.param(store, &format!("{name}.w"))?;
    let b = tape.param(store, &format!("{name}.b"))?;
    tape.linear(x, w, b)
}

/// Bias-free linear map; owns only `name.w`.
pub fn init_projection(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut SplitMix64) {
    store.init_glorot(&format!("{name}.w"), fan_in, fan_out, rng);
}

pub fn projection(tape: &mut Tape, store: &ParamStore, name: &str, x: NodeId) -> Result<NodeId> {
    let w = tape.param(store, &format!("{name}.w"))?;
    tape.matmul(x, w)
}

pub fn init_layer_norm(store: &mut ParamStore, name: &str, width: usize) {
    store.init_const(&format!("{name}.g"), &[width], 1.0);
    store.init_const(&format!("{name}.b"), &[width], 0.0);
}

pub fn layer_norm(tape: &mut Tape, store: &ParamStore, name: &str, x: NodeId) -> Result<NodeId> {
    let g = tape.param(store, &format!("{name}.g"))?;
    let b = tape.param(store, &format!("{name}.b"))?;
    tape.layer_norm(x, g, b)
}

/// Input width of linear layer `name`, if present.
pub fn linear_in_width(store: &ParamStore, name: &str) -> Option<usize> {
    store.get(&format!("{name}.w")).map(|w| w.shape()[0])
}
