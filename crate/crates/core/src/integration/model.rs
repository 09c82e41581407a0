use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use super::contrast::{build_graph_triples, build_triples, triplet_loss, ContrastConfig};
use super::fusion::{fuse, FusionOp};
use crate::autodiff::gradcheck::check_param_gradients;
use crate::autodiff::{AutodiffError, NodeId, ParamGrads, ParamStore, Result, Tape};
use crate::dataset::TaskKind;
use crate::gnn::{Gnn, GnnConfig, GraphBatch, Injection};
use crate::lm::{EncoderConfig, LmEncoder, PredictHead};
use crate::nn;
use crate::rng::SplitMix64;
use crate::smiles::{encode_batch, parse, tokenize, EncodedBatch, MolecularGraph, TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    LmBaseline,
    MpnnBaseline,
    ContrastNode,
    ContrastGraph,
    LateFusion,
    Mpnn2Lm,
    Lm2Mpnn,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::LmBaseline,
        Strategy::MpnnBaseline,
        Strategy::ContrastNode,
        Strategy::ContrastGraph,
        Strategy::LateFusion,
        Strategy::Mpnn2Lm,
        Strategy::Lm2Mpnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::LmBaseline => "lm-baseline",
            Strategy::MpnnBaseline => "mpnn-baseline",
            Strategy::ContrastNode => "contrast-node",
            Strategy::ContrastGraph => "contrast-graph",
            Strategy::LateFusion => "late-fusion",
            Strategy::Mpnn2Lm => "mpnn2lm",
            Strategy::Lm2Mpnn => "lm2mpnn",
        }
    }

    pub fn uses_lm(self) -> bool {
        self != Strategy::MpnnBaseline
    }

    pub fn uses_gnn(self) -> bool {
        self != Strategy::LmBaseline
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Strategy::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Strategy::ALL.iter().map(|k| k.name()).collect();
            format!("unknown strategy '{s}' (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub strategy: Strategy,
    pub fusion: FusionOp,
    pub task: TaskKind,
    pub encoder: EncoderConfig,
    pub gnn: GnnConfig,
    pub contrast: ContrastConfig,
}

impl ModelConfig {
    pub fn new(strategy: Strategy, task: TaskKind, vocab_size: usize) -> Self {
        ModelConfig {
            strategy,
            fusion: FusionOp::Sum,
            task,
            encoder: EncoderConfig::new(vocab_size),
            gnn: GnnConfig::default(),
            contrast: ContrastConfig::default(),
        }
    }

    /// Shrinks every width for fast tests.
    pub fn tiny(strategy: Strategy, task: TaskKind, vocab_size: usize) -> Self {
        let mut c = Self::new(strategy, task, vocab_size);
        c.encoder.hidden_dim = 8;
        c.encoder.num_heads = 2;
        c.encoder.num_layers = 1;
        c.encoder.ffn_dim = 16;
        c.encoder.max_len = 64;
        c.gnn.hidden_dim = 8;
        c.gnn.edge_hidden = 4;
        c.gnn.message_steps = 2;
        c
    }
}

/// One molecule with both views and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub smiles: String,
    pub graph: MolecularGraph,
    pub tokens: TokenSequence,
    pub label: f64,
}

impl Sample {
    pub fn new(smiles: &str, label: f64, vocab: &Vocabulary) -> std::result::Result<Self, crate::smiles::SmilesError> {
        Ok(Sample {
            smiles: smiles.to_string(),
            graph: parse(smiles)?,
            tokens: tokenize(smiles, vocab)?,
            label,
        })
    }
}

/// A mini-batch in both views.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub tokens: EncodedBatch,
    pub graphs: GraphBatch,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn new(samples: &[&Sample], max_len: usize) -> Result<Batch> {
        let seqs: Vec<&TokenSequence> = samples.iter().map(|s| &s.tokens).collect();
        let tokens = encode_batch(&seqs, max_len).map_err(|e| AutodiffError::InvalidInput {
            op: "batch",
            reason: e.to_string(),
        })?;
        let graphs: Vec<&MolecularGraph> = samples.iter().map(|s| &s.graph).collect();
        for (s, g) in samples.iter().zip(&graphs) {
            if s.tokens.atom_token_positions.len() != g.num_atoms() {
                return Err(AutodiffError::InvalidInput {
                    op: "batch",
                    reason: format!("alignment of '{}' does not match its graph", s.smiles),
                });
            }
        }
        Ok(Batch {
            tokens,
            graphs: GraphBatch::from_graphs(&graphs),
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Raw predictions (standardized units or logits) and the weighted
/// contrastive term, if the strategy has one.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub prediction: NodeId,
    pub contrast: Option<NodeId>,
    pub skipped_triples: usize,
}

/// Cross-model rows to substitute in joint fusion, for neutrality checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    /// Replaces the MPNN node states injected into the LM (mpnn2lm).
    pub mpnn_nodes: Option<NodeId>,
    /// Replaces the LM node rows injected into the MPNN (lm2mpnn).
    pub lm_nodes: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Regression targets are trained as `(y - shift) / scale`.
    pub label_shift: f64,
    pub label_scale: f64,
    lm: LmEncoder,
    gnn: Gnn,
    head: PredictHead,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        let d = config.encoder.hidden_dim;
        if config.strategy.uses_lm() && config.strategy.uses_gnn() && config.gnn.hidden_dim != d {
            return Err(AutodiffError::InvalidInput {
                op: "model",
                reason: format!("encoder width {d} and gnn width {} differ", config.gnn.hidden_dim),
            });
        }
        let lm = LmEncoder::new(config.encoder, "lm");
        let injection = (config.strategy == Strategy::Lm2Mpnn).then_some(config.fusion);
        let gnn = Gnn::new(config.gnn, "mpnn", injection);
        let head_width = match config.strategy {
            Strategy::LateFusion => config.fusion.out_width(d),
            Strategy::MpnnBaseline => config.gnn.hidden_dim,
            _ => d,
        };
        let head = PredictHead::new("head", head_width, d.max(config.gnn.hidden_dim));

        let mut params = ParamStore::new();
        let mut rng = SplitMix64::derive(seed, 0x6d6f64656c);
        if config.strategy.uses_lm() {
            lm.init(&mut params, &mut rng)?;
        }
        if config.strategy.uses_gnn() {
            gnn.init(&mut params, &mut rng);
        }
        match config.strategy {
            Strategy::LateFusion => config.fusion.init(&mut params, "fuse.gate", d, &mut rng),
            Strategy::Mpnn2Lm => {
                config.fusion.init(&mut params, "fuse.gate", d, &mut rng);
                if config.fusion == FusionOp::Concat {
                    nn::init_linear(&mut params, "fuse.proj", 2 * d, d, &mut rng);
                }
            }
            _ => {}
        }
        head.init(&mut params, &mut rng);
        Ok(Model {
            config,
            params,
            label_shift: 0.0,
            label_scale: 1.0,
            lm,
            gnn,
            head,
        })
    }

    pub fn lm(&self) -> &LmEncoder {
        &self.lm
    }

    pub fn gnn(&self) -> &Gnn {
        &self.gnn
    }

    pub fn head(&self) -> &PredictHead {
        &self.head
    }

    /// Fit the regression standardization to training labels.
    pub fn fit_labels(&mut self, labels: &[f64]) {
        if self.config.task != TaskKind::Regression || labels.is_empty() {
            return;
        }
        let n = labels.len() as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let var = labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        self.label_shift = mean;
        self.label_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    fn targets(&self, labels: &[f64]) -> Vec<f64> {
        match self.config.task {
            TaskKind::Regression => labels.iter().map(|y| (y - self.label_shift) / self.label_scale).collect(),
            TaskKind::BinaryClassification => labels.to_vec(),
        }
    }

    /// Raw outputs to task units: de-standardized values or probabilities.
    pub fn to_output(&self, raw: f64) -> f64 {
        match self.config.task {
            TaskKind::Regression => raw * self.label_scale + self.label_shift,
            TaskKind::BinaryClassification => crate::autodiff::sigmoid(raw),
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, batch: &Batch, seed: u64) -> Result<Forward> {
        self.forward_with(tape, params, batch, seed, Overrides::default())
    }

    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        batch: &Batch,
        seed: u64,
        overrides: Overrides,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let tb = &batch.tokens;
        let gb = &batch.graphs;
        let frozen = |tape: &mut Tape, x: NodeId| {
            if cfg.contrast.frozen_mpnn {
                tape.detach(x)
            } else {
                x
            }
        };
        let mut contrast = None;
        let mut skipped = 0;
        let prediction = match cfg.strategy {
            Strategy::LmBaseline => {
                let out = self.lm.run(tape, params, tb)?;
                let g = self.lm.cls(tape, out.output, tb)?;
                self.head.forward(tape, params, g)?
            }
            Strategy::MpnnBaseline => {
                let out = self.gnn.forward(tape, params, gb, None)?;
                self.head.forward(tape, params, out.graphs)?
            }
            Strategy::ContrastNode => {
                let out = self.lm.run(tape, params, tb)?;
                let (nodes, _) = self.lm.extract(tape, out.output, tb)?;
                let mpnn = self.gnn.forward(tape, params, gb, None)?;
                let targets = frozen(tape, mpnn.nodes);
                let rows = gb.num_nodes();
                let triples = build_triples(rows, rows, &gb.offsets, seed, cfg.contrast.cross_graph)?;
                skipped = triples.skipped;
                if !triples.is_empty() {
                    let t = triplet_loss(tape, nodes, targets, &triples, cfg.contrast.margin)?;
                    contrast = Some(tape.scale(t, cfg.contrast.alpha)?);
                }
                let pooled = tape.segment_mean(nodes, &gb.offsets)?;
                self.head.forward(tape, params, pooled)?
            }
            Strategy::ContrastGraph => {
                let out = self.lm.run(tape, params, tb)?;
                let g = self.lm.cls(tape, out.output, tb)?;
                let mpnn = self.gnn.forward(tape, params, gb, None)?;
                let targets = frozen(tape, mpnn.graphs);
                let triples = build_graph_triples(gb.num_graphs(), seed);
                skipped = triples.skipped;
                if triples.is_empty() {
                    warn!("graph-level contrast skipped: batch of one graph has no negative");
                } else {
                    let t = triplet_loss(tape, g, targets, &triples, cfg.contrast.margin)?;
                    contrast = Some(tape.scale(t, cfg.contrast.alpha_graph)?);
                }
                self.head.forward(tape, params, g)?
            }
            Strategy::LateFusion => {
                let out = self.lm.run(tape, params, tb)?;
                let g = self.lm.cls(tape, out.output, tb)?;
                let mpnn = self.gnn.forward(tape, params, gb, None)?;
                let fused = fuse(tape, params, g, mpnn.graphs, cfg.fusion, "fuse.gate")?;
                self.head.forward(tape, params, fused)?
            }
            Strategy::Mpnn2Lm => {
                let states = match overrides.mpnn_nodes {
                    Some(n) => n,
                    None => self.gnn.forward(tape, params, gb, None)?.nodes,
                };
                let positions = tb.flat_atom_positions();
                if tape.shape(states)[0] != positions.len() {
                    return Err(AutodiffError::InvalidInput {
                        op: "mpnn2lm",
                        reason: format!("{} node states for {} atom tokens", tape.shape(states)[0], positions.len()),
                    });
                }
                let scattered = tape.scatter_add_rows(states, positions, tb.batch * tb.len)?;
                let e_in = self.lm.embed(tape, params, tb)?;
                let mut fused = fuse(tape, params, e_in, scattered, cfg.fusion, "fuse.gate")?;
                if cfg.fusion == FusionOp::Concat {
                    fused = nn::linear(tape, params, "fuse.proj", fused)?;
                }
                let out = self.lm.encode(tape, params, fused, tb.batch, tb.len, &tb.mask)?;
                let pooled = self.lm.mean_readout(tape, out.output, tb)?;
                self.head.forward(tape, params, pooled)?
            }
            Strategy::Lm2Mpnn => {
                let rows = match overrides.lm_nodes {
                    Some(n) => n,
                    None => {
                        let out = self.lm.run(tape, params, tb)?;
                        self.lm.extract(tape, out.output, tb)?.0
                    }
                };
                let inj = Injection { rows, op: cfg.fusion };
                let out = self.gnn.forward(tape, params, gb, Some(&inj))?;
                self.head.forward(tape, params, out.graphs)?
            }
        };
        Ok(Forward {
            prediction,
            contrast,
            skipped_triples: skipped,
        })
    }

    /// Summed prediction loss on `raw` predictions: squared error on
    /// standardized targets, or logistic loss on logits.
    pub fn prediction_loss(&self, tape: &mut Tape, raw: NodeId, labels: &[f64]) -> Result<NodeId> {
        let targets = self.targets(labels);
        match self.config.task {
            TaskKind::Regression => tape.squared_error(raw, targets),
            TaskKind::BinaryClassification => tape.bce_with_logits(raw, targets),
        }
    }

    /// Prediction loss plus the weighted contrastive term.
    pub fn loss(&self, tape: &mut Tape, params: &ParamStore, batch: &Batch, seed: u64) -> Result<(NodeId, Forward)> {
        let fwd = self.forward(tape, params, batch, seed)?;
        let pred = self.prediction_loss(tape, fwd.prediction, &batch.labels)?;
        let total = match fwd.contrast {
            Some(c) => tape.add(pred, c)?,
            None => pred,
        };
        Ok((total, fwd))
    }

    /// Relative error of every parameter gradient of the full training loss
    /// against central differences.
    pub fn check_gradients(&self, batch: &Batch, max_coords: usize, seed: u64) -> Result<BTreeMap<String, f64>> {
        let value = |params: &ParamStore| -> Result<f64> {
            let mut tape = Tape::new();
            let (loss, _) = self.loss(&mut tape, params, batch, seed)?;
            Ok(tape.value(loss).item())
        };
        let analytic = |params: &ParamStore| -> Result<ParamGrads> {
            let mut tape = Tape::new();
            tape.bind_all(params);
            let (loss, _) = self.loss(&mut tape, params, batch, seed)?;
            let grads = tape.backward(loss)?;
            Ok(tape.param_grads(&grads))
        };
        check_param_gradients(&self.params, value, analytic, max_coords, seed)
    }

    /// Predictions in task units (values or probabilities).
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &self.params, batch, 0)?;
        Ok(tape.value(fwd.prediction).data().iter().map(|&r| self.to_output(r)).collect())
    }
}
