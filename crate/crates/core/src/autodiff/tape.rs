use std::collections::{BTreeMap, HashMap};

use super::error::{AutodiffError, Result};
use super::ops::{self, OpKind, Saved};
use super::params::ParamStore;
use super::tensor::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A value on the tape together with its (lazily allocated) gradient.
#[derive(Debug, Clone)]
pub struct DiffTensor {
    value: Tensor,
    grad: Option<Tensor>,
    node_id: NodeId,
    requires_grad: bool,
}

impl DiffTensor {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    pub fn node_id(&self) -> NodeId {
        self.node_id
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Debug, Clone)]
struct RecordedOp {
    kind: OpKind,
    inputs: Vec<NodeId>,
    output: NodeId,
    saved: Saved,
}

/// Gradients produced by [`Tape::backward`], keyed by node.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_node: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}

/// Gradients addressed by parameter name.
pub type ParamGrads = BTreeMap<String, Tensor>;

/// Dynamic reverse-mode tape, rebuilt for every forward pass.
///
/// Operations are appended in execution order, so the list is always
/// topologically sorted; [`backward`](Tape::backward) walks it once in
/// reverse.
#[derive(Debug, Default)]
pub struct Tape {
    tensors: Vec<DiffTensor>,
    ops: Vec<RecordedOp>,
    bindings: Vec<(String, NodeId)>,
    bound: HashMap<String, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        let node_id = NodeId(self.tensors.len());
        self.tensors.push(DiffTensor {
            value,
            grad: None,
            node_id,
            requires_grad,
        });
        node_id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    /// Bind a named parameter as a trainable leaf. Binding the same name twice
    /// returns the first node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let value = store
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?
            .clone();
        let id = self.variable(value);
        self.bindings.push((name.to_string(), id));
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Bind every parameter of `store`, so unused ones still receive a
    /// (zero) gradient.
    pub fn bind_all(&mut self, store: &ParamStore) {
        for name in store.names() {
            self.param(store, name).expect("name comes from the store");
        }
    }

    pub fn bindings(&self) -> &[(String, NodeId)] {
        &self.bindings
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.tensors[id.0].value
    }

    pub fn tensor(&self, id: NodeId) -> &DiffTensor {
        &self.tensors[id.0]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.tensors[id.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_recorded_ops(&self) -> usize {
        self.ops.len()
    }

    /// Copy of `id` cut off from the graph.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let value = self.value(id).clone();
        self.constant(value)
    }

    /// Run one operation. It is recorded only if some input requires grad.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor> = inputs.iter().map(|&i| &self.tensors[i.0].value).collect();
        let (value, saved) = ops::forward(&kind, &values)?;
        let requires_grad = inputs.iter().any(|&i| self.tensors[i.0].requires_grad);
        let output = self.leaf(value, requires_grad);
        if requires_grad {
            self.ops.push(RecordedOp {
                kind,
                inputs: inputs.to_vec(),
                output,
                saved,
            });
        }
        Ok(output)
    }

    /// Reverse sweep from a scalar loss. Every node that requires grad gets an
    /// entry; nodes the loss does not depend on get exact zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        let loss_shape = self.value(loss).shape();
        if !loss_shape.is_empty() {
            return Err(AutodiffError::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.tensors.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for rec in self.ops.iter().rev() {
            let Some(g) = grads[rec.output.0].take() else {
                continue;
            };
            let needs: Vec<bool> = rec
                .inputs
                .iter()
                .map(|&i| self.tensors[i.0].requires_grad)
                .collect();
            let inputs: Vec<&Tensor> = rec.inputs.iter().map(|&i| &self.tensors[i.0].value).collect();
            let input_grads = ops::backward(
                &rec.kind,
                &inputs,
                &self.tensors[rec.output.0].value,
                &rec.saved,
                &g,
                &needs,
            );
            grads[rec.output.0] = Some(g);
            for (&id, ig) in rec.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut grads[id.0] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        let leaves: Vec<bool> = (0..self.tensors.len()).map(|i| self.is_leaf(i)).collect();
        let mut by_node = HashMap::new();
        for (i, g) in grads.into_iter().enumerate() {
            let t = &mut self.tensors[i];
            if !t.requires_grad {
                continue;
            }
            let g = g.unwrap_or_else(|| Tensor::zeros(t.value.shape()));
            if leaves[i] {
                t.grad = Some(g.clone());
            }
            by_node.insert(NodeId(i), g);
        }
        Ok(Gradients { by_node })
    }

    fn is_leaf(&self, index: usize) -> bool {
        // Leaves are exactly the tensors that are not an op output; op
        // outputs are appended right after their inputs, so a binary search
        // over the (sorted) output ids suffices.
        self.ops
            .binary_search_by_key(&index, |r| r.output.0)
            .is_err()
    }

    /// Resolve gradients of every bound parameter by name.
    pub fn param_grads(&self, grads: &Gradients) -> ParamGrads {
        self.bindings
            .iter()
            .filter_map(|(name, id)| grads.get(*id).map(|g| (name.clone(), g.clone())))
            .collect()
    }

    // ---- convenience wrappers -------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Matmul, &[a, b])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(OpKind::Concat, parts)
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Max, &[a, b])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sigmoid, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Tanh, &[x])
    }

    pub fn masked_softmax(&mut self, x: NodeId, mask: Vec<bool>) -> Result<NodeId> {
        self.apply(OpKind::MaskedSoftmax { mask }, &[x])
    }

    pub fn layer_norm(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        self.apply(OpKind::LayerNorm { eps: 1e-5 }, &[x, scale, shift])
    }

    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MeanRows, &[x])
    }

    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::SumRows, &[x])
    }

    pub fn gather_rows(&mut self, x: NodeId, index: Vec<usize>) -> Result<NodeId> {
        self.apply(OpKind::GatherRows { index }, &[x])
    }

    pub fn scatter_add_rows(&mut self, x: NodeId, index: Vec<usize>, rows: usize) -> Result<NodeId> {
        self.apply(OpKind::ScatterAddRows { index, rows }, &[x])
    }

    pub fn pnorm_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::PNormDiff, &[a, b])
    }

    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::BiasAdd, &[x, b])
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.bias_add(xw, b)
    }

    pub fn dropout(&mut self, x: NodeId, rate: f64, seed: u64) -> Result<NodeId> {
        if rate == 0.0 {
            return Ok(x);
        }
        self.apply(OpKind::Dropout { rate, seed }, &[x])
    }

    pub fn squared_error(&mut self, x: NodeId, target: Vec<f64>) -> Result<NodeId> {
        self.apply(OpKind::SquaredError { target }, &[x])
    }

    pub fn bce_with_logits(&mut self, x: NodeId, target: Vec<f64>) -> Result<NodeId> {
        self.apply(OpKind::BceWithLogits { target }, &[x])
    }

    pub fn cross_entropy(&mut self, x: NodeId, target: Vec<usize>) -> Result<NodeId> {
        self.apply(OpKind::CrossEntropy { target }, &[x])
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Transpose, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.apply(OpKind::Reshape { shape }, &[x])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale { factor }, &[x])
    }

    pub fn add_scalar(&mut self, x: NodeId, value: f64) -> Result<NodeId> {
        self.apply(OpKind::AddScalar { value }, &[x])
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::SumAll, &[x])
    }

    pub fn scale_rows(&mut self, x: NodeId, factors: Vec<f64>) -> Result<NodeId> {
        self.apply(OpKind::ScaleRows { factors }, &[x])
    }

    /// Mean of consecutive row blocks delimited by `offsets`
    /// (`offsets[0] == 0`, last entry == row count).
    pub fn segment_mean(&mut self, x: NodeId, offsets: &[usize]) -> Result<NodeId> {
        let groups = offsets.len().saturating_sub(1);
        let mut index = Vec::with_capacity(self.shape(x).first().copied().unwrap_or(0));
        let mut factors = Vec::with_capacity(groups);
        for g in 0..groups {
            let count = offsets[g + 1] - offsets[g];
            if count == 0 {
                return Err(AutodiffError::InvalidInput {
                    op: "segment-mean",
                    reason: format!("segment {g} is empty"),
                });
            }
            index.extend(std::iter::repeat(g).take(count));
            factors.push(1.0 / count as f64);
        }
        let sums = self.scatter_add_rows(x, index, groups)?;
        self.scale_rows(sums, factors)
    }
}
