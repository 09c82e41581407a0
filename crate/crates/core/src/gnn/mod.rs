//! Edge-conditioned message passing with a gated recurrent update, the
//! two-layer GraphConv variant, and mean readout.
//!
//! Graphs are batched block-diagonally: node rows of all graphs are stacked
//! and `offsets` delimits each graph's block. Every bond carries messages in
//! both directions.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, NodeId, ParamStore, Result, Tape, Tensor};
use crate::integration::{fuse, FusionOp};
use crate::nn;
use crate::rng::SplitMix64;
use crate::smiles::{MolecularGraph, EDGE_WIDTH, NODE_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnVariant {
    Mpnn,
    GraphConv,
}

impl fmt::Display for GnnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GnnVariant::Mpnn => "mpnn",
            GnnVariant::GraphConv => "graphconv",
        })
    }
}

impl FromStr for GnnVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mpnn" => Ok(GnnVariant::Mpnn),
            "graphconv" | "gcn" => Ok(GnnVariant::GraphConv),
            other => Err(format!("unknown gnn variant '{other}' (expected mpnn or graphconv)")),
        }
    }
}

/// Node-state update `U(h, m)` of the MPNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateKind {
    Gru,
    Mlp,
}

impl fmt::Display for UpdateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateKind::Gru => "gru",
            UpdateKind::Mlp => "mlp",
        })
    }
}

impl FromStr for UpdateKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gru" => Ok(UpdateKind::Gru),
            "mlp" => Ok(UpdateKind::Mlp),
            other => Err(format!("unknown update '{other}' (expected gru or mlp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub hidden_dim: usize,
    pub message_steps: usize,
    pub edge_feature_dim: usize,
    pub node_feature_dim: usize,
    /// Hidden width of the edge network.
    pub edge_hidden: usize,
    pub variant: GnnVariant,
    pub graphconv_layers: usize,
    pub update: UpdateKind,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            hidden_dim: 64,
            message_steps: 3,
            edge_feature_dim: EDGE_WIDTH,
            node_feature_dim: NODE_WIDTH,
            edge_hidden: 32,
            variant: GnnVariant::Mpnn,
            graphconv_layers: 2,
            update: UpdateKind::Gru,
        }
    }
}

/// Block-diagonal batch of molecular graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    /// `(num_nodes, node_feature_dim)`.
    pub node_features: Tensor,
    /// Graph `g` owns node rows `offsets[g]..offsets[g + 1]`.
    pub offsets: Vec<usize>,
    /// Undirected bonds in global node indices.
    pub edges: Vec<(usize, usize)>,
    /// `(num_edges, edge_feature_dim)`.
    pub edge_features: Tensor,
}

impl GraphBatch {
    pub fn from_graphs(graphs: &[&MolecularGraph]) -> Self {
        let mut nodes = Vec::new();
        let mut efeat = Vec::new();
        let mut edges = Vec::new();
        let mut offsets = vec![0];
        for g in graphs {
            let base = *offsets.last().unwrap();
            nodes.extend_from_slice(g.node_features.data());
            efeat.extend_from_slice(g.edge_features.data());
            edges.extend(g.bonds.iter().map(|b| (base + b.u, base + b.v)));
            offsets.push(base + g.num_atoms());
        }
        let n = *offsets.last().unwrap();
        GraphBatch {
            node_features: Tensor::new(vec![n, NODE_WIDTH], nodes).expect("width-9 rows"),
            edge_features: Tensor::new(vec![edges.len(), EDGE_WIDTH], efeat).expect("width-4 rows"),
            offsets,
            edges,
        }
    }

    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if let Some(&(u, v)) = self.edges.iter().find(|&&(u, v)| u >= n || v >= n || u == v) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "message-pass",
                index: u.max(v),
                len: n,
            });
        }
        if self.offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AutodiffError::InvalidInput {
                op: "readout",
                reason: "graph boundaries must be strictly increasing (no empty graphs)".into(),
            });
        }
        Ok(())
    }
}

/// Cross-model rows fused into every step, one row per node.
#[derive(Debug, Clone, Copy)]
pub struct Injection {
    pub rows: NodeId,
    pub op: FusionOp,
}

#[derive(Debug, Clone, Copy)]
pub struct GnnOutput {
    /// Final node states `(num_nodes, d)`.
    pub nodes: NodeId,
    /// Mean readout `(num_graphs, d)`.
    pub graphs: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gnn {
    pub config: GnnConfig,
    pub prefix: String,
    /// Fusion applied to injected rows, fixing the width of internal layers.
    pub injection: Option<FusionOp>,
}

impl Gnn {
    pub fn new(config: GnnConfig, prefix: impl Into<String>, injection: Option<FusionOp>) -> Self {
        Gnn {
            config,
            prefix: prefix.into(),
            injection,
        }
    }

    /// Width of the states that messages and updates operate on.
    pub fn work_width(&self) -> usize {
        let d = self.config.hidden_dim;
        self.injection.map_or(d, |op| op.out_width(d))
    }

    fn name(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SplitMix64) {
        let c = &self.config;
        let (d, w) = (c.hidden_dim, self.work_width());
        nn::init_linear(store, &self.name("in"), c.node_feature_dim, d, rng);
        if let Some(op) = self.injection {
            op.init(store, &self.name("inj.gate"), d, rng);
        }
        match c.variant {
            GnnVariant::Mpnn => {
                nn::init_linear(store, &self.name("edge1"), c.edge_feature_dim, c.edge_hidden, rng);
                nn::init_linear(store, &self.name("edge2"), c.edge_hidden, w * w, rng);
                match c.update {
                    UpdateKind::Gru => {
                        nn::init_linear(store, &self.name("gru.z"), 2 * w, w, rng);
                        nn::init_linear(store, &self.name("gru.r"), 2 * w, w, rng);
                        nn::init_linear(store, &self.name("gru.c"), 2 * w, w, rng);
                    }
                    UpdateKind::Mlp => {
                        nn::init_linear(store, &self.name("upd1"), 2 * w, w, rng);
                        nn::init_linear(store, &self.name("upd2"), w, w, rng);
                    }
                }
                if w != d {
                    nn::init_linear(store, &self.name("inj.proj"), w, d, rng);
                }
            }
            GnnVariant::GraphConv => {
                for l in 0..c.graphconv_layers {
                    nn::init_linear(store, &self.name(&format!("gc{l}.self")), w, d, rng);
                    store.init_glorot(&self.name(&format!("gc{l}.nbr")), w, d, rng);
                }
            }
        }
    }

    /// `A_uv` for each distinct edge-feature row: returns the `(U, w*w)`
    /// matrix stack and each bond's row in it. Row `k` reshaped to `(w, w)`
    /// right-multiplies row-vector states: message `= h_u · A_k`.
    pub fn edge_network(&self, tape: &mut Tape, store: &ParamStore, edge_features: &Tensor) -> Result<(NodeId, Vec<usize>)> {
        if edge_features.cols() != self.config.edge_feature_dim {
            return Err(AutodiffError::InvalidInput {
                op: "edge-network",
                reason: format!(
                    "edge features have width {}, expected {}",
                    edge_features.cols(),
                    self.config.edge_feature_dim
                ),
            });
        }
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut unique = Vec::new();
        let mut kinds = Vec::with_capacity(edge_features.rows());
        for i in 0..edge_features.rows() {
            let row = edge_features.row(i);
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let next = seen.len();
            let k = *seen.entry(key).or_insert_with(|| {
                unique.push(row.to_vec());
                next
            });
            kinds.push(k);
        }
        let e = if unique.is_empty() {
            tape.constant(Tensor::zeros(&[0, self.config.edge_feature_dim]))
        } else {
            tape.constant(Tensor::from_rows(&unique)?)
        };
        let a = self.edge_network_on(tape, store, e)?;
        Ok((a, kinds))
    }

    /// The edge perceptron on arbitrary `(U, edge_dim)` rows.
    pub fn edge_network_on(&self, tape: &mut Tape, store: &ParamStore, e: NodeId) -> Result<NodeId> {
        let h = nn::linear(tape, store, &self.name("edge1"), e)?;
        let h = tape.relu(h)?;
        nn::linear(tape, store, &self.name("edge2"), h)
    }

    /// `m_v = Σ_{u ∈ N(v)} h_u · A_uv` over both orientations of every bond.
    pub fn message_pass(
        &self,
        tape: &mut Tape,
        h: NodeId,
        edges: &[(usize, usize)],
        a: NodeId,
        kinds: &[usize],
    ) -> Result<NodeId> {
        let (n, w) = (tape.shape(h)[0], tape.shape(h)[1]);
        let num_kinds = tape.shape(a)[0];
        let mut by_kind: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); num_kinds];
        for (&(u, v), &k) in edges.iter().zip(kinds) {
            if u >= n || v >= n {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "message-pass",
                    index: u.max(v),
                    len: n,
                });
            }
            by_kind[k].0.extend([u, v]);
            by_kind[k].1.extend([v, u]);
        }
        let mut total: Option<NodeId> = None;
        for (k, (src, dst)) in by_kind.into_iter().enumerate() {
            if src.is_empty() {
                continue;
            }
            let ak = tape.gather_rows(a, vec![k])?;
            let ak = tape.reshape(ak, vec![w, w])?;
            let hu = tape.gather_rows(h, src)?;
            let msg = tape.matmul(hu, ak)?;
            let m = tape.scatter_add_rows(msg, dst, n)?;
            total = Some(match total {
                Some(t) => tape.add(t, m)?,
                None => m,
            });
        }
        match total {
            Some(t) => Ok(t),
            None => Ok(tape.constant(Tensor::zeros(&[n, w]))),
        }
    }

    /// `U(h, m) = (1 − z) ⊙ h + z ⊙ tanh([m ∥ r ⊙ h] W_c + b_c)` with
    /// `z, r = sigmoid([h ∥ m] W + b)`, or the perceptron alternative.
    pub fn update(&self, tape: &mut Tape, store: &ParamStore, h: NodeId, m: NodeId) -> Result<NodeId> {
        if tape.shape(h) != tape.shape(m) {
            return Err(AutodiffError::ShapeMismatch {
                op: "update",
                left: tape.shape(h).to_vec(),
                right: tape.shape(m).to_vec(),
            });
        }
        let hm = tape.concat(&[h, m])?;
        match self.config.update {
            UpdateKind::Gru => {
                let z = nn::linear(tape, store, &self.name("gru.z"), hm)?;
                let z = tape.sigmoid(z)?;
                let r = nn::linear(tape, store, &self.name("gru.r"), hm)?;
                let r = tape.sigmoid(r)?;
                let rh = tape.mul(r, h)?;
                let mrh = tape.concat(&[m, rh])?;
                let c = nn::linear(tape, store, &self.name("gru.c"), mrh)?;
                let c = tape.tanh(c)?;
                let neg = tape.scale(z, -1.0)?;
                let keep = tape.add_scalar(neg, 1.0)?;
                let old = tape.mul(keep, h)?;
                let new = tape.mul(z, c)?;
                tape.add(old, new)
            }
            UpdateKind::Mlp => {
                let x = nn::linear(tape, store, &self.name("upd1"), hm)?;
                let x = tape.relu(x)?;
                nn::linear(tape, store, &self.name("upd2"), x)
            }
        }
    }

    /// `relu(h W_self + (Σ_{u ∈ N(v)} h_u) W_nbr + b)`.
    pub fn graphconv_layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        layer: usize,
        h: NodeId,
        edges: &[(usize, usize)],
    ) -> Result<NodeId> {
        let n = tape.shape(h)[0];
        let own = nn::linear(tape, store, &self.name(&format!("gc{layer}.self")), h)?;
        let (src, dst): (Vec<usize>, Vec<usize>) =
            edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).unzip();
        let out = if src.is_empty() {
            own
        } else {
            let hu = tape.gather_rows(h, src)?;
            let sums = tape.scatter_add_rows(hu, dst, n)?;
            let w = tape.param(store, &self.name(&format!("gc{layer}.nbr")))?;
            let nbr = tape.matmul(sums, w)?;
            tape.add(own, nbr)?
        };
        tape.relu(out)
    }

    /// Mean over each graph's node block.
    pub fn readout(&self, tape: &mut Tape, h: NodeId, offsets: &[usize]) -> Result<NodeId> {
        tape.segment_mean(h, offsets)
    }

    fn inject(&self, tape: &mut Tape, store: &ParamStore, h: NodeId, inj: Option<&Injection>) -> Result<NodeId> {
        match inj {
            Some(i) => fuse(tape, store, h, i.rows, i.op, &self.name("inj.gate")),
            None => Ok(h),
        }
    }

    /// Full forward pass. With an injection, `h_v` is replaced by
    /// `h_v ⊕ h_LM(v)` inside both aggregation and update at every step.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &GraphBatch,
        injection: Option<&Injection>,
    ) -> Result<GnnOutput> {
        batch.validate()?;
        if let Some(inj) = injection {
            let expected = [batch.num_nodes(), self.config.hidden_dim];
            if tape.shape(inj.rows) != expected {
                return Err(AutodiffError::InvalidInput {
                    op: "gnn-injection",
                    reason: format!(
                        "injected rows have shape {:?}, graph batch needs {:?}",
                        tape.shape(inj.rows),
                        expected
                    ),
                });
            }
            if Some(inj.op) != self.injection {
                return Err(AutodiffError::InvalidInput {
                    op: "gnn-injection",
                    reason: format!("network was built for {:?}, got {}", self.injection, inj.op),
                });
            }
        }
        let x = tape.constant(batch.node_features.clone());
        let mut h = nn::linear(tape, store, &self.name("in"), x)?;
        match self.config.variant {
            GnnVariant::Mpnn => {
                let (a, kinds) = self.edge_network(tape, store, &batch.edge_features)?;
                for _ in 0..self.config.message_steps {
                    let hv = self.inject(tape, store, h, injection)?;
                    let m = self.message_pass(tape, hv, &batch.edges, a, &kinds)?;
                    h = self.update(tape, store, hv, m)?;
                    if self.work_width() != self.config.hidden_dim {
                        h = nn::linear(tape, store, &self.name("inj.proj"), h)?;
                    }
                }
            }
            GnnVariant::GraphConv => {
                for l in 0..self.config.graphconv_layers {
                    let hv = self.inject(tape, store, h, injection)?;
                    h = self.graphconv_layer(tape, store, l, hv, &batch.edges)?;
                }
            }
        }
        let graphs = self.readout(tape, h, &batch.offsets)?;
        Ok(GnnOutput { nodes: h, graphs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(d: usize) -> (Gnn, ParamStore) {
        let cfg = GnnConfig {
            hidden_dim: d,
            edge_hidden: 3,
            ..GnnConfig::default()
        };
        let g = Gnn::new(cfg, "mpnn", None);
        let mut store = ParamStore::new();
        g.init(&mut store, &mut SplitMix64::new(9));
        (g, store)
    }

    fn identity_edges(g: &Gnn, store: &mut ParamStore) {
        let d = g.config.hidden_dim;
        store.get_mut("mpnn.edge2.w").unwrap().data_mut().fill(0.0);
        let b = store.get_mut("mpnn.edge2.b").unwrap().data_mut();
        b.fill(0.0);
        for i in 0..d {
            b[i * d + i] = 1.0;
        }
    }

    fn messages(h: Vec<Vec<f64>>, edges: &[(usize, usize)]) -> Tensor {
        let (g, mut store) = net(2);
        identity_edges(&g, &mut store);
        let mut tape = Tape::new();
        let ef = Tensor::full(&[edges.len(), 4], 1.0);
        let (a, kinds) = g.edge_network(&mut tape, &store, &ef).unwrap();
        assert_eq!(tape.shape(a)[1], 4);
        let h = tape.constant(Tensor::from_rows(&h).unwrap());
        let m = g.message_pass(&mut tape, h, edges, a, &kinds).unwrap();
        tape.value(m).clone()
    }

    #[test]
    fn identity_edge_matrix() {
        let m = messages(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], &[(0, 1)]);
        assert_eq!(m.row(0), &[3.0, 4.0]);
        assert_eq!(m.row(1), &[1.0, 2.0]);
        assert_eq!(m.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn star_center_sums_leaves() {
        let h = vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 7.0]];
        let m = messages(h, &[(0, 1), (0, 2), (3, 0)]);
        assert_eq!(m.row(0), &[9.0, 13.0]);
        assert_eq!(m.row(3), &[0.0, 0.0]);
    }

    #[test]
    fn gate_limits() {
        let (g, mut store) = net(3);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![0.5, -0.2, 0.9]]).unwrap());
        let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0, -1.0]]).unwrap());
        store.get_mut("mpnn.gru.z.w").unwrap().data_mut().fill(0.0);
        store.get_mut("mpnn.gru.z.b").unwrap().data_mut().fill(-30.0);
        let out = g.update(&mut tape, &store, h, m).unwrap();
        assert!(tape.value(out).max_abs_diff(tape.value(h)) < 1e-12);

        store.get_mut("mpnn.gru.z.b").unwrap().data_mut().fill(30.0);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![0.5, -0.2, 0.9]]).unwrap());
        let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0, -1.0]]).unwrap());
        let out = g.update(&mut tape, &store, h, m).unwrap();
        let hm = tape.concat(&[h, m]).unwrap();
        let r = nn::linear(&mut tape, &store, "mpnn.gru.r", hm).unwrap();
        let r = tape.sigmoid(r).unwrap();
        let rh = tape.mul(r, h).unwrap();
        let mrh = tape.concat(&[m, rh]).unwrap();
        let c = nn::linear(&mut tape, &store, "mpnn.gru.c", mrh).unwrap();
        let c = tape.tanh(c).unwrap();
        let diff = tape.value(out).max_abs_diff(tape.value(c));
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn graphconv_no_edges_is_relu() {
        let cfg = GnnConfig {
            hidden_dim: 2,
            variant: GnnVariant::GraphConv,
            ..GnnConfig::default()
        };
        let g = Gnn::new(cfg, "mpnn", None);
        let mut store = ParamStore::new();
        g.init(&mut store, &mut SplitMix64::new(0));
        store.insert("mpnn.gc0.self.w", Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![1.5, -2.0], vec![1.5, -2.0]]).unwrap());
        let out = g.graphconv_layer(&mut tape, &store, 0, h, &[]).unwrap();
        assert_eq!(tape.value(out).data(), &[1.5, 0.0, 1.5, 0.0]);
    }

    #[test]
    fn graphconv_path_by_hand() {
        let cfg = GnnConfig {
            hidden_dim: 2,
            variant: GnnVariant::GraphConv,
            ..GnnConfig::default()
        };
        let g = Gnn::new(cfg, "mpnn", None);
        let mut store = ParamStore::new();
        g.init(&mut store, &mut SplitMix64::new(0));
        store.insert("mpnn.gc0.self.w", Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        store.insert("mpnn.gc0.self.b", Tensor::vector(vec![0.0, -1.0]));
        store.insert("mpnn.gc0.nbr", Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
        let mut tape = Tape::new();
        // Path 0 - 1 - 2.
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let out = g.graphconv_layer(&mut tape, &store, 0, h, &[(0, 1), (1, 2)]).unwrap();
        // v0: [1,1] + swap([3,4]) = [5,4]; v1: [3,3] + swap([6,8]) = [11,9]; v2: [5,5] + swap([3,4]) = [9,8]
        assert_eq!(tape.value(out).data(), &[5.0, 4.0, 11.0, 9.0, 9.0, 8.0]);
    }

    #[test]
    fn readout_means() {
        let (g, _) = net(2);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 1.0], vec![3.0, 3.0], vec![7.0, 8.0]]).unwrap());
        let r = g.readout(&mut tape, h, &[0, 2, 3]).unwrap();
        assert_eq!(tape.value(r).data(), &[2.0, 2.0, 7.0, 8.0]);
        assert!(g.readout(&mut tape, h, &[0, 0, 3]).is_err());
    }

    #[test]
    fn edge_width_checked() {
        let (g, store) = net(2);
        let mut tape = Tape::new();
        assert!(g.edge_network(&mut tape, &store, &Tensor::zeros(&[1, 3])).is_err());
    }
}
