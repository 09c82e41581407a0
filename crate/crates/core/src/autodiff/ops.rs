//! Forward and adjoint kernels for every recorded operation.

use super::error::{AutodiffError, Result};
use super::tensor::Tensor;
use crate::rng::SplitMix64;

/// Operation kinds understood by [`Tape::apply`](super::Tape::apply).
///
/// Kinds that need non-differentiable side data (index vectors, masks,
/// targets) carry it inline.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    /// `(.., m, k) x (k, n)` with a shared right operand, or batched
    /// `(B.., m, k) x (B.., k, n)` with identical leading axes.
    Matmul,
    /// Concatenate any number of inputs along the last axis.
    Concat,
    /// Elementwise maximum; ties route the gradient to the first input.
    Max,
    /// Gradient at exactly 0 is 0.
    Relu,
    Sigmoid,
    Tanh,
    /// Softmax over the last axis. `mask` holds `M * n` flags (true = keep)
    /// and the input's rows are split into `M` equal consecutive groups, so a
    /// `(B, Lq, Lk)` score tensor takes a `(B, Lk)` key mask. Masked entries
    /// come out exactly 0; a fully masked row is all zeros.
    MaskedSoftmax { mask: Vec<bool> },
    /// Inputs `x (.., n)`, `scale (n)`, `shift (n)`; normalizes the last axis.
    LayerNorm { eps: f64 },
    /// Mean over axis 0.
    MeanRows,
    /// Sum over axis 0.
    SumRows,
    GatherRows { index: Vec<usize> },
    ScatterAddRows { index: Vec<usize>, rows: usize },
    /// Euclidean norm of `a - b` over the last axis. Gradient at a zero
    /// difference is 0.
    PNormDiff,
    /// `x (.., n) + b (n)`.
    BiasAdd,
    /// Inverted dropout with a mask drawn from `seed`.
    Dropout { rate: f64, seed: u64 },
    /// `sum (x - target)^2`.
    SquaredError { target: Vec<f64> },
    /// `sum BCE(sigmoid(x), target)` computed stably from logits.
    BceWithLogits { target: Vec<f64> },
    /// Rows of logits `(R, C)` against class ids; summed over rows.
    CrossEntropy { target: Vec<usize> },
    /// Swap the last two axes.
    Transpose,
    Reshape { shape: Vec<usize> },
    Scale { factor: f64 },
    AddScalar { value: f64 },
    SumAll,
    /// Multiply each axis-0 slice by a constant factor.
    ScaleRows { factors: Vec<f64> },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "subtract",
            OpKind::Mul => "multiply",
            OpKind::Matmul => "matmul",
            OpKind::Concat => "concat",
            OpKind::Max => "max",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::MaskedSoftmax { .. } => "masked-softmax",
            OpKind::LayerNorm { .. } => "layer-norm",
            OpKind::MeanRows => "mean-rows",
            OpKind::SumRows => "sum-rows",
            OpKind::GatherRows { .. } => "gather-rows",
            OpKind::ScatterAddRows { .. } => "scatter-add-rows",
            OpKind::PNormDiff => "pnorm-diff",
            OpKind::BiasAdd => "bias-add",
            OpKind::Dropout { .. } => "dropout",
            OpKind::SquaredError { .. } => "squared-error",
            OpKind::BceWithLogits { .. } => "bce-with-logits",
            OpKind::CrossEntropy { .. } => "cross-entropy",
            OpKind::Transpose => "transpose",
            OpKind::Reshape { .. } => "reshape",
            OpKind::Scale { .. } => "scale",
            OpKind::AddScalar { .. } => "add-scalar",
            OpKind::SumAll => "sum-all",
            OpKind::ScaleRows { .. } => "scale-rows",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Concat => None,
            OpKind::LayerNorm { .. } => Some(3),
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Matmul
            | OpKind::Max
            | OpKind::PNormDiff
            | OpKind::BiasAdd => Some(2),
            _ => Some(1),
        }
    }
}

/// Intermediates kept from the forward pass for the adjoint.
#[derive(Debug, Clone, Default)]
pub(crate) enum Saved {
    #[default]
    None,
    DropoutMask(Vec<f64>),
    LayerNorm { xhat: Vec<f64>, rstd: Vec<f64> },
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, reason: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidInput {
        op,
        reason: reason.into(),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, a, b));
    }
    Ok(())
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c (m x n) += a (m x k) * b (k x n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    debug_assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the debug assertions above spell out the bounds every caller
    // guarantees; all slices are live for the duration of the call and `c`
    // does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

enum MatmulLayout {
    /// Left operand flattened to `(rows, k)`, right operand `(k, n)`.
    Shared { rows: usize, k: usize, n: usize },
    Batched { batch: usize, m: usize, k: usize, n: usize },
}

fn matmul_layout(a: &Tensor, b: &Tensor) -> Result<(MatmulLayout, Vec<usize>)> {
    const OP: &str = "matmul";
    if a.rank() < 2 || b.rank() < 2 {
        return Err(mismatch(OP, a, b));
    }
    let k = a.cols();
    if b.rank() == 2 {
        if b.shape()[0] != k {
            return Err(mismatch(OP, a, b));
        }
        let n = b.shape()[1];
        let mut out = a.shape().to_vec();
        *out.last_mut().unwrap() = n;
        return Ok((
            MatmulLayout::Shared {
                rows: a.rows(),
                k,
                n,
            },
            out,
        ));
    }
    let ra = a.rank();
    if b.rank() != ra || a.shape()[..ra - 2] != b.shape()[..ra - 2] || b.shape()[ra - 2] != k {
        return Err(mismatch(OP, a, b));
    }
    let batch: usize = a.shape()[..ra - 2].iter().product();
    let m = a.shape()[ra - 2];
    let n = b.shape()[ra - 1];
    let mut out = a.shape().to_vec();
    out[ra - 1] = n;
    Ok((MatmulLayout::Batched { batch, m, k, n }, out))
}

fn last_axis_groups(op: &'static str, x: &Tensor, mask_len: usize) -> Result<usize> {
    let n = x.cols();
    if n == 0 || mask_len % n != 0 {
        return Err(invalid(
            op,
            format!("mask of length {mask_len} does not tile rows of width {n}"),
        ));
    }
    let groups = mask_len / n;
    let rows = x.rows();
    if groups == 0 || rows % groups != 0 {
        return Err(invalid(
            op,
            format!("{rows} rows cannot be split into {groups} mask groups"),
        ));
    }
    Ok(rows / groups)
}

fn check_index(op: &'static str, index: &[usize], len: usize) -> Result<()> {
    if let Some(&bad) = index.iter().find(|&&i| i >= len) {
        return Err(AutodiffError::IndexOutOfRange {
            op,
            index: bad,
            len,
        });
    }
    Ok(())
}

/// Size of one axis-0 slice.
fn slice_len(x: &Tensor) -> Result<usize> {
    match x.shape().first() {
        Some(&r) if r > 0 => Ok(x.numel() / r),
        Some(_) => Ok(x.shape()[1..].iter().product()),
        None => Err(invalid("rows", "operation needs a tensor of rank >= 1")),
    }
}

pub(crate) fn forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<(Tensor, Saved)> {
    let op = kind.name();
    match kind.arity() {
        Some(n) if inputs.len() != n => {
            return Err(invalid(
                op,
                format!("expected {n} inputs, got {}", inputs.len()),
            ))
        }
        None if inputs.is_empty() => return Err(invalid(op, "needs at least one input")),
        _ => {}
    }
    for (i, t) in inputs.iter().enumerate() {
        if t.has_nan() {
            return Err(AutodiffError::NanInput { op, input: i });
        }
    }
    let x = inputs[0];
    let out = match kind {
        OpKind::Add => {
            same_shape(op, x, inputs[1])?;
            zip(x, inputs[1], |a, b| a + b)
        }
        OpKind::Sub => {
            same_shape(op, x, inputs[1])?;
            zip(x, inputs[1], |a, b| a - b)
        }
        OpKind::Mul => {
            same_shape(op, x, inputs[1])?;
            zip(x, inputs[1], |a, b| a * b)
        }
        OpKind::Max => {
            same_shape(op, x, inputs[1])?;
            zip(x, inputs[1], |a, b| if a >= b { a } else { b })
        }
        OpKind::Matmul => {
            let b = inputs[1];
            let (layout, shape) = matmul_layout(x, b)?;
            let mut c = vec![0.0; shape.iter().product()];
            match layout {
                MatmulLayout::Shared { rows, k, n } => {
                    gemm(rows, k, n, x.data(), k, 1, b.data(), n, 1, &mut c)
                }
                MatmulLayout::Batched { batch, m, k, n } => {
                    for i in 0..batch {
                        gemm(
                            m,
                            k,
                            n,
                            &x.data()[i * m * k..],
                            k,
                            1,
                            &b.data()[i * k * n..],
                            n,
                            1,
                            &mut c[i * m * n..],
                        );
                    }
                }
            }
            Tensor::from_parts(shape, c)
        }
        OpKind::Concat => {
            let lead = &x.shape()[..x.rank().saturating_sub(1)];
            if x.rank() == 0 {
                return Err(invalid(op, "cannot concatenate scalars"));
            }
            for t in &inputs[1..] {
                if t.rank() != x.rank() || &t.shape()[..t.rank() - 1] != lead {
                    return Err(mismatch(op, x, t));
                }
            }
            let rows = x.rows();
            let width: usize = inputs.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * width);
            for r in 0..rows {
                for t in inputs {
                    data.extend_from_slice(t.row(r));
                }
            }
            let mut shape = x.shape().to_vec();
            *shape.last_mut().unwrap() = width;
            Tensor::from_parts(shape, data)
        }
        OpKind::Relu => map(x, |v| if v > 0.0 { v } else { 0.0 }),
        OpKind::Sigmoid => map(x, sigmoid),
        OpKind::Tanh => map(x, f64::tanh),
        OpKind::MaskedSoftmax { mask } => {
            let per_group = last_axis_groups(op, x, mask.len())?;
            let n = x.cols();
            let mut data = vec![0.0; x.numel()];
            for r in 0..x.rows() {
                let keep = &mask[(r / per_group) * n..(r / per_group + 1) * n];
                let row = x.row(r);
                let mx = row
                    .iter()
                    .zip(keep)
                    .filter(|(_, &k)| k)
                    .map(|(&v, _)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                if mx == f64::NEG_INFINITY {
                    continue;
                }
                let out = &mut data[r * n..(r + 1) * n];
                let mut total = 0.0;
                for j in 0..n {
                    if keep[j] {
                        out[j] = (row[j] - mx).exp();
                        total += out[j];
                    }
                }
                for v in out.iter_mut() {
                    *v /= total;
                }
            }
            Tensor::from_parts(x.shape().to_vec(), data)
        }
        OpKind::LayerNorm { eps } => {
            let (scale, shift) = (inputs[1], inputs[2]);
            let n = x.cols();
            if x.rank() == 0 || scale.shape() != [n] {
                return Err(mismatch(op, x, scale));
            }
            if shift.shape() != [n] {
                return Err(mismatch(op, x, shift));
            }
            let rows = x.rows();
            let mut data = vec![0.0; x.numel()];
            let mut xhat = vec![0.0; x.numel()];
            let mut rstd = vec![0.0; rows];
            for r in 0..rows {
                let row = x.row(r);
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let rs = 1.0 / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..n {
                    let h = (row[j] - mean) * rs;
                    xhat[r * n + j] = h;
                    data[r * n + j] = h * scale.data()[j] + shift.data()[j];
                }
            }
            return Ok((
                Tensor::from_parts(x.shape().to_vec(), data),
                Saved::LayerNorm { xhat, rstd },
            ));
        }
        OpKind::MeanRows | OpKind::SumRows => {
            let len = slice_len(x)?;
            let rows = x.shape()[0];
            let mut data = vec![0.0; len];
            for r in 0..rows {
                for (o, v) in data.iter_mut().zip(&x.data()[r * len..(r + 1) * len]) {
                    *o += v;
                }
            }
            if matches!(kind, OpKind::MeanRows) {
                if rows == 0 {
                    return Err(invalid(op, "mean over zero rows"));
                }
                for v in &mut data {
                    *v /= rows as f64;
                }
            }
            Tensor::from_parts(x.shape()[1..].to_vec(), data)
        }
        OpKind::GatherRows { index } => {
            let len = slice_len(x)?;
            check_index(op, index, x.shape()[0])?;
            let mut data = Vec::with_capacity(index.len() * len);
            for &i in index {
                data.extend_from_slice(&x.data()[i * len..(i + 1) * len]);
            }
            let mut shape = x.shape().to_vec();
            shape[0] = index.len();
            Tensor::from_parts(shape, data)
        }
        OpKind::ScatterAddRows { index, rows } => {
            let len = slice_len(x)?;
            if index.len() != x.shape()[0] {
                return Err(invalid(
                    op,
                    format!("{} indices for {} rows", index.len(), x.shape()[0]),
                ));
            }
            check_index(op, index, *rows)?;
            let mut data = vec![0.0; rows * len];
            for (r, &i) in index.iter().enumerate() {
                for (o, v) in data[i * len..(i + 1) * len]
                    .iter_mut()
                    .zip(&x.data()[r * len..(r + 1) * len])
                {
                    *o += v;
                }
            }
            let mut shape = x.shape().to_vec();
            shape[0] = *rows;
            Tensor::from_parts(shape, data)
        }
        OpKind::PNormDiff => {
            let b = inputs[1];
            same_shape(op, x, b)?;
            if x.rank() == 0 {
                return Err(invalid(op, "needs vectors"));
            }
            let data = (0..x.rows())
                .map(|r| {
                    x.row(r)
                        .iter()
                        .zip(b.row(r))
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            Tensor::from_parts(x.shape()[..x.rank() - 1].to_vec(), data)
        }
        OpKind::BiasAdd => {
            let b = inputs[1];
            let n = x.cols();
            if x.rank() == 0 || b.shape() != [n] {
                return Err(mismatch(op, x, b));
            }
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(n) {
                for (v, bias) in row.iter_mut().zip(b.data()) {
                    *v += bias;
                }
            }
            Tensor::from_parts(x.shape().to_vec(), data)
        }
        OpKind::Dropout { rate, seed } => {
            if !(0.0..1.0).contains(rate) {
                return Err(invalid(op, format!("rate {rate} outside [0, 1)")));
            }
            let mut rng = SplitMix64::new(*seed);
            let keep = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..x.numel())
                .map(|_| if rng.next_f64() >= *rate { keep } else { 0.0 })
                .collect();
            let out = zip(x, &Tensor::from_parts(x.shape().to_vec(), mask.clone()), |a, m| a * m);
            return Ok((out, Saved::DropoutMask(mask)));
        }
        OpKind::SquaredError { target } => {
            if target.len() != x.numel() {
                return Err(invalid(
                    op,
                    format!("{} targets for {} predictions", target.len(), x.numel()),
                ));
            }
            let s = x
                .data()
                .iter()
                .zip(target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum();
            Tensor::scalar(s)
        }
        OpKind::BceWithLogits { target } => {
            if target.len() != x.numel() {
                return Err(invalid(
                    op,
                    format!("{} targets for {} logits", target.len(), x.numel()),
                ));
            }
            let s = x
                .data()
                .iter()
                .zip(target)
                .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
                .sum();
            Tensor::scalar(s)
        }
        OpKind::CrossEntropy { target } => {
            if x.rank() != 2 || target.len() != x.rows() {
                return Err(invalid(
                    op,
                    format!("{} targets for logits of shape {:?}", target.len(), x.shape()),
                ));
            }
            check_index(op, target, x.cols())?;
            let mut s = 0.0;
            for (r, &t) in target.iter().enumerate() {
                let row = x.row(r);
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                s += lse - row[t];
            }
            Tensor::scalar(s)
        }
        OpKind::Transpose => {
            let r = x.rank();
            if r < 2 {
                return Err(invalid(op, "needs rank >= 2"));
            }
            let (m, n) = (x.shape()[r - 2], x.shape()[r - 1]);
            let batch = x.numel() / (m * n).max(1);
            let mut data = vec![0.0; x.numel()];
            for b in 0..batch {
                let src = &x.data()[b * m * n..(b + 1) * m * n];
                let dst = &mut data[b * m * n..(b + 1) * m * n];
                for i in 0..m {
                    for j in 0..n {
                        dst[j * m + i] = src[i * n + j];
                    }
                }
            }
            let mut shape = x.shape().to_vec();
            shape.swap(r - 2, r - 1);
            Tensor::from_parts(shape, data)
        }
        OpKind::Reshape { shape } => x.clone().reshaped(shape.clone())?,
        OpKind::Scale { factor } => map(x, |v| v * factor),
        OpKind::AddScalar { value } => map(x, |v| v + value),
        OpKind::SumAll => Tensor::scalar(x.data().iter().sum()),
        OpKind::ScaleRows { factors } => {
            let len = slice_len(x)?;
            if factors.len() != x.shape()[0] {
                return Err(invalid(
                    op,
                    format!("{} factors for {} rows", factors.len(), x.shape()[0]),
                ));
            }
            let mut data = x.data().to_vec();
            for (r, f) in factors.iter().enumerate() {
                for v in &mut data[r * len..(r + 1) * len] {
                    *v *= f;
                }
            }
            Tensor::from_parts(x.shape().to_vec(), data)
        }
    };
    Ok((out, Saved::None))
}

/// Vector-Jacobian products. Returns one entry per input; `None` where the
/// caller did not ask for that input's gradient.
pub(crate) fn backward(
    kind: &OpKind,
    inputs: &[&Tensor],
    output: &Tensor,
    saved: &Saved,
    g: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let x = inputs[0];
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    let mut out: Vec<Option<Tensor>> = vec![None; inputs.len()];
    match kind {
        OpKind::Add => {
            if want(0) {
                out[0] = Some(g.clone());
            }
            if want(1) {
                out[1] = Some(g.clone());
            }
        }
        OpKind::Sub => {
            if want(0) {
                out[0] = Some(g.clone());
            }
            if want(1) {
                out[1] = Some(map(g, |v| -v));
            }
        }
        OpKind::Mul => {
            if want(0) {
                out[0] = Some(zip(g, inputs[1], |a, b| a * b));
            }
            if want(1) {
                out[1] = Some(zip(g, x, |a, b| a * b));
            }
        }
        OpKind::Max => {
            let y = inputs[1];
            let pick = |first: bool| {
                Tensor::from_parts(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(x.data().iter().zip(y.data()))
                        .map(|(&gv, (&a, &b))| if (a >= b) == first { gv } else { 0.0 })
                        .collect(),
                )
            };
            if want(0) {
                out[0] = Some(pick(true));
            }
            if want(1) {
                out[1] = Some(pick(false));
            }
        }
        OpKind::Matmul => {
            let b = inputs[1];
            let (layout, _) = matmul_layout(x, b).expect("validated in forward");
            match layout {
                MatmulLayout::Shared { rows, k, n } => {
                    if want(0) {
                        // dA = dC * B^T
                        let mut da = vec![0.0; rows * k];
                        gemm(rows, n, k, g.data(), n, 1, b.data(), 1, n, &mut da);
                        out[0] = Some(Tensor::from_parts(x.shape().to_vec(), da));
                    }
                    if want(1) {
                        // dB = A^T * dC
                        let mut db = vec![0.0; k * n];
                        gemm(k, rows, n, x.data(), 1, k, g.data(), n, 1, &mut db);
                        out[1] = Some(Tensor::from_parts(b.shape().to_vec(), db));
                    }
                }
                MatmulLayout::Batched { batch, m, k, n } => {
                    if want(0) {
                        let mut da = vec![0.0; batch * m * k];
                        for i in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g.data()[i * m * n..],
                                n,
                                1,
                                &b.data()[i * k * n..],
                                1,
                                n,
                                &mut da[i * m * k..],
                            );
                        }
                        out[0] = Some(Tensor::from_parts(x.shape().to_vec(), da));
                    }
                    if want(1) {
                        let mut db = vec![0.0; batch * k * n];
                        for i in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &x.data()[i * m * k..],
                                1,
                                k,
                                &g.data()[i * m * n..],
                                n,
                                1,
                                &mut db[i * k * n..],
                            );
                        }
                        out[1] = Some(Tensor::from_parts(b.shape().to_vec(), db));
                    }
                }
            }
        }
        OpKind::Concat => {
            let rows = g.rows();
            let width = g.cols();
            let mut offset = 0;
            for (i, t) in inputs.iter().enumerate() {
                let w = t.cols();
                if want(i) {
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&g.data()[r * width + offset..r * width + offset + w]);
                    }
                    out[i] = Some(Tensor::from_parts(t.shape().to_vec(), data));
                }
                offset += w;
            }
        }
        OpKind::Relu => {
            if want(0) {
                out[0] = Some(zip(g, x, |gv, v| if v > 0.0 { gv } else { 0.0 }));
            }
        }
        OpKind::Sigmoid => {
            if want(0) {
                out[0] = Some(zip(g, output, |gv, s| gv * s * (1.0 - s)));
            }
        }
        OpKind::Tanh => {
            if want(0) {
                out[0] = Some(zip(g, output, |gv, t| gv * (1.0 - t * t)));
            }
        }
        OpKind::MaskedSoftmax { .. } => {
            if want(0) {
                let n = output.cols();
                let mut data = vec![0.0; output.numel()];
                for r in 0..output.rows() {
                    let y = output.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        data[r * n + j] = y[j] * (gr[j] - dot);
                    }
                }
                out[0] = Some(Tensor::from_parts(x.shape().to_vec(), data));
            }
        }
        OpKind::LayerNorm { .. } => {
            let Saved::LayerNorm { xhat, rstd } = saved else {
                unreachable!("layer-norm saves its statistics")
            };
            let scale = inputs[1];
            let n = x.cols();
            let rows = x.rows();
            if want(1) || want(2) {
                let mut dscale = vec![0.0; n];
                let mut dshift = vec![0.0; n];
                for r in 0..rows {
                    for j in 0..n {
                        let gv = g.data()[r * n + j];
                        dscale[j] += gv * xhat[r * n + j];
                        dshift[j] += gv;
                    }
                }
                if want(1) {
                    out[1] = Some(Tensor::from_parts(vec![n], dscale));
                }
                if want(2) {
                    out[2] = Some(Tensor::from_parts(vec![n], dshift));
                }
            }
            if want(0) {
                let mut dx = vec![0.0; x.numel()];
                for r in 0..rows {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..n {
                        let dh = g.data()[r * n + j] * scale.data()[j];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[r * n + j];
                    }
                    mean_dh /= n as f64;
                    mean_dh_h /= n as f64;
                    for j in 0..n {
                        let dh = g.data()[r * n + j] * scale.data()[j];
                        dx[r * n + j] = rstd[r] * (dh - mean_dh - xhat[r * n + j] * mean_dh_h);
                    }
                }
                out[0] = Some(Tensor::from_parts(x.shape().to_vec(), dx));
            }
        }
        OpKind::MeanRows | OpKind::SumRows => {
            if want(0) {
                let rows = x.shape()[0];
                let f = if matches!(kind, OpKind::MeanRows) {
                    1.0 / rows as f64
                } else {
                    1.0
                };
                let mut data = Vec::with_capacity(x.numel());
                for _ in 0..rows {
                    data.extend(g.data().iter().map(|v| v * f));
                }
                out[0] = Some(Tensor::from_parts(x.shape().to_vec(), data));
            }
        }
        OpKind::GatherRows { index } => {
            if want(0) {
                let len = x.numel() / x.shape()[0].max(1);
                let mut data = vec![0.0; x.numel()];
                for (r, &i) in index.iter().enumerate() {
                    for (o, v) in data[i * len..(i + 1) * len]
                        .iter_mut()
                        .zip(&g.data()[r * len..(r + 1) * len])
                    {
                        *o += v;
                    }
                }
                out[0] = Some(Tensor::from_parts(x.shape().to_vec(), data));
            }
        }
        OpKind::ScatterAddRows { index, .. } => {
            if want(0) {
                let len = slice_len(x).unwrap_or(0);
                let mut data = Vec::with_capacity(x.numel());
                for &i in index {
                    data.extend_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                out[0] = Some(Tensor::from_parts(x.shape().to_vec(), data));
            }
        }
        OpKind::PNormDiff => {
            let b = inputs[1];
            let n = x.cols();
            let mut da = vec![0.0; x.numel()];
            for r in 0..x.rows() {
                let norm = output.data()[r];
                if norm == 0.0 {
                    continue;
                }
                let f = g.data()[r] / norm;
                for j in 0..n {
                    da[r * n + j] = f * (x.data()[r * n + j] - b.data()[r * n + j]);
                }
            }
            if want(1) {
                out[1] = Some(Tensor::from_parts(
                    b.shape().to_vec(),
                    da.iter().map(|v| -v).collect(),
                ));
            }
            if want(0) {
                out[0] = Some(Tensor::from_parts(x.shape().to_vec(), da));
            }
        }
        OpKind::BiasAdd => {
            if want(0) {
                out[0] = Some(g.clone());
            }
            if want(1) {
                let n = x.cols();
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (o, v) in db.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                out[1] = Some(Tensor::from_parts(vec![n], db));
            }
        }
        OpKind::Dropout { .. } => {
            if want(0) {
                let Saved::DropoutMask(mask) = saved else {
                    unreachable!("dropout saves its mask")
                };
                out[0] = Some(Tensor::from_parts(
                    x.shape().to_vec(),
                    g.data().iter().zip(mask).map(|(a, m)| a * m).collect(),
                ));
            }
        }
        OpKind::SquaredError { target } => {
            if want(0) {
                let gv = g.item();
                out[0] = Some(Tensor::from_parts(
                    x.shape().to_vec(),
                    x.data()
                        .iter()
                        .zip(target)
                        .map(|(p, t)| 2.0 * (p - t) * gv)
                        .collect(),
                ));
            }
        }
        OpKind::BceWithLogits { target } => {
            if want(0) {
                let gv = g.item();
                out[0] = Some(Tensor::from_parts(
                    x.shape().to_vec(),
                    x.data()
                        .iter()
                        .zip(target)
                        .map(|(&z, &t)| (sigmoid(z) - t) * gv)
                        .collect(),
                ));
            }
        }
        OpKind::CrossEntropy { target } => {
            if want(0) {
                let gv = g.item();
                let n = x.cols();
                let mut data = vec![0.0; x.numel()];
                for (r, &t) in target.iter().enumerate() {
                    let row = x.row(r);
                    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let total: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                    for j in 0..n {
                        let p = (row[j] - mx).exp() / total;
                        data[r * n + j] = gv * (p - if j == t { 1.0 } else { 0.0 });
                    }
                }
                out[0] = Some(Tensor::from_parts(x.shape().to_vec(), data));
            }
        }
        OpKind::Transpose => {
            if want(0) {
                let (t, _) = forward(&OpKind::Transpose, &[g]).expect("transpose of gradient");
                out[0] = Some(t);
            }
        }
        OpKind::Reshape { .. } => {
            if want(0) {
                out[0] = Some(g.clone().reshaped(x.shape().to_vec()).expect("same numel"));
            }
        }
        OpKind::Scale { factor } => {
            if want(0) {
                out[0] = Some(map(g, |v| v * factor));
            }
        }
        OpKind::AddScalar { .. } => {
            if want(0) {
                out[0] = Some(g.clone());
            }
        }
        OpKind::SumAll => {
            if want(0) {
                out[0] = Some(Tensor::full(x.shape(), g.item()));
            }
        }
        OpKind::ScaleRows { factors } => {
            if want(0) {
                let (t, _) = forward(
                    &OpKind::ScaleRows {
                        factors: factors.clone(),
                    },
                    &[g],
                )
                .expect("same layout as forward");
                out[0] = Some(t);
            }
        }
    }
    out
}
