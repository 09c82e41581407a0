use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, NodeId, ParamStore, Result, Tape};
use crate::nn;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionOp {
    Sum,
    Max,
    Concat,
    Gate,
}

impl FusionOp {
    pub const ALL: [FusionOp; 4] = [FusionOp::Sum, FusionOp::Max, FusionOp::Concat, FusionOp::Gate];

    /// Output width for inputs of width `d`.
    pub fn out_width(self, d: usize) -> usize {
        match self {
            FusionOp::Concat => 2 * d,
            _ => d,
        }
    }

    /// Gate parameters `name.w (2d, d)`, `name.b (d)`; other ops own nothing.
    pub fn init(self, store: &mut ParamStore, name: &str, d: usize, rng: &mut SplitMix64) {
        if self == FusionOp::Gate {
            nn::init_linear(store, name, 2 * d, d, rng);
        }
    }
}

impl fmt::Display for FusionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionOp::Sum => "sum",
            FusionOp::Max => "max",
            FusionOp::Concat => "concat",
            FusionOp::Gate => "gate",
        })
    }
}

impl FromStr for FusionOp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sum" => Ok(FusionOp::Sum),
            "max" => Ok(FusionOp::Max),
            "concat" | "concate" => Ok(FusionOp::Concat),
            "gate" => Ok(FusionOp::Gate),
            other => Err(format!("unknown fusion op '{other}' (expected sum, max, concat or gate)")),
        }
    }
}

/// `h1 ⊕ h2`. For the gate, `g = sigmoid([h1 ∥ h2] W + b)` and the output is
/// `g ⊙ h1 + (1 − g) ⊙ h2`, with parameters under `gate_name`.
pub fn fuse(
    tape: &mut Tape,
    store: &ParamStore,
    h1: NodeId,
    h2: NodeId,
    op: FusionOp,
    gate_name: &str,
) -> Result<NodeId> {
    if tape.shape(h1) != tape.shape(h2) {
        return Err(AutodiffError::ShapeMismatch {
            op: "fuse",
            left: tape.shape(h1).to_vec(),
            right: tape.shape(h2).to_vec(),
        });
    }
    match op {
        FusionOp::Sum => tape.add(h1, h2),
        FusionOp::Max => tape.max(h1, h2),
        FusionOp::Concat => tape.concat(&[h1, h2]),
        FusionOp::Gate => {
            let both = tape.concat(&[h1, h2])?;
            let pre = nn::linear(tape, store, gate_name, both)?;
            let g = tape.sigmoid(pre)?;
            let a = tape.mul(g, h1)?;
            let neg = tape.scale(g, -1.0)?;
            let one_minus = tape.add_scalar(neg, 1.0)?;
            let b = tape.mul(one_minus, h2)?;
            tape.add(a, b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn run(op: FusionOp, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut store = ParamStore::new();
        store.init_const("g.w", &[2 * a.len(), a.len()], 0.0);
        store.init_const("g.b", &[a.len()], 0.0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[a.to_vec()]).unwrap());
        let y = tape.constant(Tensor::from_rows(&[b.to_vec()]).unwrap());
        let f = fuse(&mut tape, &store, x, y, op, "g").unwrap();
        tape.value(f).data().to_vec()
    }

    #[test]
    fn operators() {
        assert_eq!(run(FusionOp::Sum, &[1.0, 2.0], &[3.0, 4.0]), vec![4.0, 6.0]);
        assert_eq!(run(FusionOp::Max, &[1.0, 5.0], &[4.0, 2.0]), vec![4.0, 5.0]);
        assert_eq!(run(FusionOp::Concat, &[1.0, 2.0], &[3.0, 4.0]), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(run(FusionOp::Gate, &[1.0, 2.0], &[3.0, 4.0]), vec![2.0, 3.0]);
    }

    #[test]
    fn commutativity() {
        let (a, b) = ([0.3, -1.0, 2.0], [1.5, 0.2, -4.0]);
        assert_eq!(run(FusionOp::Sum, &a, &b), run(FusionOp::Sum, &b, &a));
        assert_eq!(run(FusionOp::Max, &a, &b), run(FusionOp::Max, &b, &a));
        assert_ne!(run(FusionOp::Concat, &a, &b), run(FusionOp::Concat, &b, &a));
    }

    #[test]
    fn shape_mismatch() {
        let store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let y = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(fuse(&mut tape, &store, x, y, FusionOp::Sum, "g").is_err());
    }
}
