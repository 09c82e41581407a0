//! Central finite-difference oracle for analytic gradients.
//!
//! The numeric side only ever calls forward kernels, so it stays
//! independent of the adjoint code it checks. Errors are measured per input
//! tensor as `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)`.

use std::collections::BTreeMap;
use std::fmt;

use super::error::Result;
use super::ops::{self, OpKind};
use super::params::ParamStore;
use super::tape::{ParamGrads, Tape};
use super::tensor::Tensor;
use crate::rng::SplitMix64;

pub const FD_STEP: f64 = 1e-5;

/// Vector relative error; two (near-)zero vectors compare as exact.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

/// Gradient norms below this are indistinguishable from central-difference
/// round-off (`~ eps·|L| / h`), so they are not used to scale the error.
pub const NOISE_FLOOR: f64 = 1e-5;

/// [`relative_error`] with the denominator floored at [`NOISE_FLOOR`]; used
/// where exact-zero gradients occur structurally (e.g. key biases under
/// softmax shift invariance).
pub fn floored_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(NOISE_FLOOR)
}

/// Op families the checker knows how to instantiate from a trial shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpFamily {
    Add,
    Sub,
    Mul,
    Matmul,
    BatchedMatmul,
    Concat,
    Max,
    Relu,
    Sigmoid,
    Tanh,
    MaskedSoftmax,
    LayerNorm,
    MeanRows,
    SumRows,
    GatherRows,
    ScatterAddRows,
    PNormDiff,
    BiasAdd,
    Dropout,
    SquaredError,
    BceWithLogits,
    CrossEntropy,
    Transpose,
    Reshape,
    Scale,
    AddScalar,
    SumAll,
    ScaleRows,
}

impl OpFamily {
    pub const ALL: [OpFamily; 28] = [
        OpFamily::Add,
        OpFamily::Sub,
        OpFamily::Mul,
        OpFamily::Matmul,
        OpFamily::BatchedMatmul,
        OpFamily::Concat,
        OpFamily::Max,
        OpFamily::Relu,
        OpFamily::Sigmoid,
        OpFamily::Tanh,
        OpFamily::MaskedSoftmax,
        OpFamily::LayerNorm,
        OpFamily::MeanRows,
        OpFamily::SumRows,
        OpFamily::GatherRows,
        OpFamily::ScatterAddRows,
        OpFamily::PNormDiff,
        OpFamily::BiasAdd,
        OpFamily::Dropout,
        OpFamily::SquaredError,
        OpFamily::BceWithLogits,
        OpFamily::CrossEntropy,
        OpFamily::Transpose,
        OpFamily::Reshape,
        OpFamily::Scale,
        OpFamily::AddScalar,
        OpFamily::SumAll,
        OpFamily::ScaleRows,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpFamily::BatchedMatmul => "batched-matmul",
            other => other.sample_kind().name(),
        }
    }

    fn sample_kind(self) -> OpKind {
        match self {
            OpFamily::Add => OpKind::Add,
            OpFamily::Sub => OpKind::Sub,
            OpFamily::Mul => OpKind::Mul,
            OpFamily::Matmul | OpFamily::BatchedMatmul => OpKind::Matmul,
            OpFamily::Concat => OpKind::Concat,
            OpFamily::Max => OpKind::Max,
            OpFamily::Relu => OpKind::Relu,
            OpFamily::Sigmoid => OpKind::Sigmoid,
            OpFamily::Tanh => OpKind::Tanh,
            OpFamily::MaskedSoftmax => OpKind::MaskedSoftmax { mask: vec![] },
            OpFamily::LayerNorm => OpKind::LayerNorm { eps: 1e-5 },
            OpFamily::MeanRows => OpKind::MeanRows,
            OpFamily::SumRows => OpKind::SumRows,
            OpFamily::GatherRows => OpKind::GatherRows { index: vec![] },
            OpFamily::ScatterAddRows => OpKind::ScatterAddRows {
                index: vec![],
                rows: 0,
            },
            OpFamily::PNormDiff => OpKind::PNormDiff,
            OpFamily::BiasAdd => OpKind::BiasAdd,
            OpFamily::Dropout => OpKind::Dropout { rate: 0.0, seed: 0 },
            OpFamily::SquaredError => OpKind::SquaredError { target: vec![] },
            OpFamily::BceWithLogits => OpKind::BceWithLogits { target: vec![] },
            OpFamily::CrossEntropy => OpKind::CrossEntropy { target: vec![] },
            OpFamily::Transpose => OpKind::Transpose,
            OpFamily::Reshape => OpKind::Reshape { shape: vec![] },
            OpFamily::Scale => OpKind::Scale { factor: 0.0 },
            OpFamily::AddScalar => OpKind::AddScalar { value: 0.0 },
            OpFamily::SumAll => OpKind::SumAll,
            OpFamily::ScaleRows => OpKind::ScaleRows { factors: vec![] },
        }
    }

    /// Number of entries a trial shape for this family carries.
    pub fn trial_rank(self) -> usize {
        match self {
            OpFamily::Matmul | OpFamily::Concat | OpFamily::GatherRows | OpFamily::ScatterAddRows => 3,
            OpFamily::MaskedSoftmax | OpFamily::Transpose => 3,
            OpFamily::BatchedMatmul => 4,
            _ => 2,
        }
    }

    /// Build a concrete op and random inputs from a trial shape.
    ///
    /// Trial shapes: elementwise and row ops take `[rows, cols]`; matmul
    /// `[m, k, n]`; batched matmul `[batch, m, k, n]`; concat
    /// `[rows, c1, c2]`; gather `[rows, cols, picks]`; scatter
    /// `[sources, cols, rows]`; masked softmax `[groups, rows_per_group, n]`;
    /// transpose `[batch, m, n]`; cross-entropy `[rows, classes]`.
    pub fn instantiate(self, shape: &[usize], rng: &mut SplitMix64) -> (OpKind, Vec<Tensor>) {
        assert_eq!(shape.len(), self.trial_rank(), "{}: trial shape {shape:?}", self.name());
        match self {
            OpFamily::Add | OpFamily::Sub | OpFamily::Mul | OpFamily::PNormDiff => {
                let a = random_tensor(shape, rng);
                let b = random_tensor(shape, rng);
                (self.sample_kind(), vec![a, b])
            }
            OpFamily::Max => {
                let a = random_tensor(shape, rng);
                let mut b = random_tensor(shape, rng);
                // keep |a - b| away from the tie
                for (bv, av) in b.data_mut().iter_mut().zip(a.data()) {
                    if (*bv - av).abs() < 0.05 {
                        *bv = av + 0.5;
                    }
                }
                (OpKind::Max, vec![a, b])
            }
            OpFamily::Relu => {
                let mut a = random_tensor(shape, rng);
                for v in a.data_mut() {
                    if v.abs() < 1e-3 {
                        *v = if *v < 0.0 { -0.1 } else { 0.1 };
                    }
                }
                (OpKind::Relu, vec![a])
            }
            OpFamily::Sigmoid
            | OpFamily::Tanh
            | OpFamily::MeanRows
            | OpFamily::SumRows
            | OpFamily::SumAll => (self.sample_kind(), vec![random_tensor(shape, rng)]),
            OpFamily::Scale => (OpKind::Scale { factor: -1.7 }, vec![random_tensor(shape, rng)]),
            OpFamily::AddScalar => (OpKind::AddScalar { value: 0.3 }, vec![random_tensor(shape, rng)]),
            OpFamily::Matmul => {
                let (m, k, n) = (shape[0], shape[1], shape[2]);
                (OpKind::Matmul, vec![random_tensor(&[m, k], rng), random_tensor(&[k, n], rng)])
            }
            OpFamily::BatchedMatmul => {
                let (b, m, k, n) = (shape[0], shape[1], shape[2], shape[3]);
                (OpKind::Matmul, vec![random_tensor(&[b, m, k], rng), random_tensor(&[b, k, n], rng)])
            }
            OpFamily::Concat => {
                let (r, c1, c2) = (shape[0], shape[1], shape[2]);
                (OpKind::Concat, vec![random_tensor(&[r, c1], rng), random_tensor(&[r, c2], rng)])
            }
            OpFamily::MaskedSoftmax => {
                let (groups, per, n) = (shape[0], shape[1], shape[2]);
                let x = random_tensor(&[groups, per, n], rng);
                let mask: Vec<bool> = (0..groups * n)
                    .map(|i| i % n == 0 || rng.next_f64() > 0.3)
                    .collect();
                (OpKind::MaskedSoftmax { mask }, vec![x])
            }
            OpFamily::LayerNorm => {
                let n = shape[1];
                let x = random_tensor(shape, rng);
                let scale = random_tensor(&[n], rng);
                let shift = random_tensor(&[n], rng);
                (OpKind::LayerNorm { eps: 1e-5 }, vec![x, scale, shift])
            }
            OpFamily::GatherRows => {
                let (r, c, picks) = (shape[0], shape[1], shape[2]);
                let index = (0..picks).map(|_| rng.below(r)).collect();
                (OpKind::GatherRows { index }, vec![random_tensor(&[r, c], rng)])
            }
            OpFamily::ScatterAddRows => {
                let (k, c, rows) = (shape[0], shape[1], shape[2]);
                let index = (0..k).map(|_| rng.below(rows)).collect();
                (
                    OpKind::ScatterAddRows { index, rows },
                    vec![random_tensor(&[k, c], rng)],
                )
            }
            OpFamily::BiasAdd => {
                let x = random_tensor(shape, rng);
                let b = random_tensor(&[shape[1]], rng);
                (OpKind::BiasAdd, vec![x, b])
            }
            OpFamily::Dropout => {
                let seed = rng.next_u64();
                (
                    OpKind::Dropout { rate: 0.3, seed },
                    vec![random_tensor(shape, rng)],
                )
            }
            OpFamily::SquaredError => {
                let x = random_tensor(shape, rng);
                let target = random_tensor(shape, rng).into_data();
                (OpKind::SquaredError { target }, vec![x])
            }
            OpFamily::BceWithLogits => {
                let x = random_tensor(shape, rng);
                let target = (0..x.numel())
                    .map(|_| if rng.next_f64() < 0.5 { 0.0 } else { 1.0 })
                    .collect();
                (OpKind::BceWithLogits { target }, vec![x])
            }
            OpFamily::CrossEntropy => {
                let (r, c) = (shape[0], shape[1]);
                let x = random_tensor(shape, rng);
                let target = (0..r).map(|_| rng.below(c)).collect();
                (OpKind::CrossEntropy { target }, vec![x])
            }
            OpFamily::Transpose => (OpKind::Transpose, vec![random_tensor(shape, rng)]),
            OpFamily::Reshape => (
                OpKind::Reshape {
                    shape: vec![shape[1], shape[0]],
                },
                vec![random_tensor(shape, rng)],
            ),
            OpFamily::ScaleRows => {
                let x = random_tensor(shape, rng);
                let factors = (0..shape[0]).map(|_| rng.uniform(-2.0, 2.0)).collect();
                (OpKind::ScaleRows { factors }, vec![x])
            }
        }
    }
}

impl fmt::Display for OpFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn random_tensor(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())
}

/// Largest relative error over all inputs of one op application.
///
/// The scalar under test is `sum(w * op(inputs))` with fixed random weights
/// `w`, which exercises every output coordinate.
pub fn check_op(kind: &OpKind, inputs: &[Tensor], seed: u64) -> Result<f64> {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let (out, _) = ops::forward(kind, &refs)?;
    let mut rng = SplitMix64::new(seed);
    let weights: Vec<f64> = (0..out.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();

    let mut tape = Tape::new();
    let ids: Vec<_> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let y = tape.apply(kind.clone(), &ids)?;
    let w = tape.constant(Tensor::from_parts(out.shape().to_vec(), weights.clone()));
    let yw = tape.mul(y, w)?;
    let loss = tape.sum_all(yw)?;
    let grads = tape.backward(loss)?;

    let objective = |xs: &[Tensor]| -> f64 {
        let refs: Vec<&Tensor> = xs.iter().collect();
        let (o, _) = ops::forward(kind, &refs).expect("perturbed forward");
        o.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).expect("input requires grad");
        let mut numeric = vec![0.0; inputs[which].numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = work[which].data()[j];
            work[which].data_mut()[j] = orig + FD_STEP;
            let plus = objective(&work);
            work[which].data_mut()[j] = orig - FD_STEP;
            let minus = objective(&work);
            work[which].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub kind: String,
    pub trials: usize,
    pub max_rel_error: f64,
    pub passed: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>6} {:>14}  status", "kind", "trials", "max rel err")?;
        for e in &self.entries {
            writeln!(
                f,
                "{:<20} {:>6} {:>14.3e}  {}",
                e.kind,
                e.trials,
                e.max_rel_error,
                if e.passed { "ok" } else { "FAIL" }
            )?;
            if let Some(msg) = &e.failure {
                writeln!(f, "    {msg}")?;
            }
        }
        write!(f, "tolerance {:.1e}", self.tolerance)
    }
}

/// Check one op family on each trial shape. Failures (including errors raised
/// by the op) become report entries rather than errors.
pub fn check_gradients(family: OpFamily, trial_shapes: &[Vec<usize>], tolerance: f64, seed: u64) -> GradCheckEntry {
    assert!(tolerance > 0.0, "tolerance must be positive");
    let mut rng = SplitMix64::derive(seed, family as u64);
    let mut worst: f64 = 0.0;
    let mut failure = None;
    for shape in trial_shapes {
        let (kind, inputs) = family.instantiate(shape, &mut rng);
        match check_op(&kind, &inputs, rng.next_u64()) {
            Ok(err) => worst = worst.max(err),
            Err(e) => {
                failure = Some(format!("shape {shape:?}: {e}"));
                worst = f64::INFINITY;
            }
        }
    }
    GradCheckEntry {
        kind: family.name().to_string(),
        trials: trial_shapes.len(),
        max_rel_error: worst,
        passed: failure.is_none() && worst < tolerance,
        failure,
    }
}

/// `count` random trial shapes with every dimension in `1..=5`.
pub fn random_trial_shapes(family: OpFamily, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = SplitMix64::derive(seed, 1000 + family as u64);
    (0..count)
        .map(|_| {
            (0..family.trial_rank())
                .map(|i| {
                    // cross-entropy needs at least two classes, concat/softmax
                    // rows at least one entry: 1..=5 covers both except classes
                    if family == OpFamily::CrossEntropy && i == 1 {
                        2 + rng.below(4)
                    } else {
                        1 + rng.below(5)
                    }
                })
                .collect()
        })
        .collect()
}

/// Every op family on `trials` random shapes.
pub fn run_suite(trials: usize, tolerance: f64, seed: u64) -> GradCheckReport {
    let entries = OpFamily::ALL
        .iter()
        .map(|&fam| check_gradients(fam, &random_trial_shapes(fam, trials, seed), tolerance, seed))
        .collect();
    GradCheckReport { tolerance, entries }
}

/// Compare analytic parameter gradients of a scalar function against central
/// differences. `loss` evaluates the function; `grads` returns the analytic
/// gradient by parameter name. At most `max_coords` coordinates per tensor
/// are probed (chosen with `seed`); the result maps each parameter to its
/// relative error over the probed coordinates.
pub fn check_param_gradients<L, G>(
    params: &ParamStore,
    mut loss: L,
    grads: G,
    max_coords: usize,
    seed: u64,
) -> Result<BTreeMap<String, f64>>
where
    L: FnMut(&ParamStore) -> Result<f64>,
    G: FnOnce(&ParamStore) -> Result<ParamGrads>,
{
    let analytic = grads(params)?;
    let mut rng = SplitMix64::new(seed);
    let mut work = params.clone();
    let mut out = BTreeMap::new();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name).unwrap().numel();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > max_coords {
            rng.shuffle(&mut coords);
            coords.truncate(max_coords);
            coords.sort_unstable();
        }
        let g = analytic
            .get(&name)
            .ok_or_else(|| super::AutodiffError::MissingGradient(name.clone()))?;
        let mut a = Vec::with_capacity(coords.len());
        let mut num = Vec::with_capacity(coords.len());
        for &j in &coords {
            let orig = work.get(&name).unwrap().data()[j];
            work.get_mut(&name).unwrap().data_mut()[j] = orig + FD_STEP;
            let plus = loss(&work)?;
            work.get_mut(&name).unwrap().data_mut()[j] = orig - FD_STEP;
            let minus = loss(&work)?;
            work.get_mut(&name).unwrap().data_mut()[j] = orig;
            a.push(g.data()[j]);
            num.push((plus - minus) / (2.0 * FD_STEP));
        }
        out.insert(name, floored_relative_error(&a, &num));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_three_by_four_times_four_by_two() {
        let entry = check_gradients(OpFamily::Matmul, &[vec![3, 4, 2]], 1e-4, 5);
        assert!(entry.passed, "{entry:?}");
    }

    #[test]
    fn relu_away_from_kink() {
        let entry = check_gradients(OpFamily::Relu, &random_trial_shapes(OpFamily::Relu, 10, 1), 1e-4, 1);
        assert!(entry.passed, "{entry:?}");
    }

    #[test]
    fn add_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let a = tape.variable(Tensor::zeros(&[2, 3]));
        let b = tape.variable(Tensor::full(&[2, 3], 4.0));
        let c = tape.add(a, b).unwrap();
        let loss = tape.sum_all(c).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap(), &Tensor::full(&[2, 3], 1.0));
        assert_eq!(g.get(b).unwrap(), &Tensor::full(&[2, 3], 1.0));
    }

    #[test]
    fn relative_error_of_equal_vectors_is_zero() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn broken_gradient_is_reported_not_thrown() {
        // A mask that does not tile the rows makes every trial fail inside
        // the op; the checker must turn that into a failed entry.
        let mut rng = SplitMix64::new(0);
        let (_, inputs) = OpFamily::Sigmoid.instantiate(&[2, 2], &mut rng);
        let err = check_op(&OpKind::MaskedSoftmax { mask: vec![true; 3] }, &inputs, 0);
        assert!(err.is_err());
    }
}
