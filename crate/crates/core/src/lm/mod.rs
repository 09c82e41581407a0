//! Small post-LN transformer encoder over SMILES tokens, the shared
//! prediction head, and masked-language-model pretraining.
//!
//! Batches are processed flat: every activation is `(B * L, d)` and attention
//! reshapes to `(B, L, d_head)` per head.

mod mlm;

pub use mlm::{mlm_loss, mlm_pretrain_step};

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, NodeId, ParamStore, Result, Tape};
use crate::nn;
use crate::rng::SplitMix64;
use crate::smiles::EncodedBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden_dim: 64,
            num_layers: 3,
            num_heads: 4,
            ffn_dim: 256,
            max_len: 256,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(AutodiffError::InvalidInput {
                op: "encoder-config",
                reason: format!(
                    "hidden_dim {} not divisible by num_heads {}",
                    self.hidden_dim, self.num_heads
                ),
            });
        }
        Ok(())
    }
}

/// Encoder output plus the per-layer, per-head attention probabilities
/// (each `(B, L, L)`), kept for inspection.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub output: NodeId,
    pub attention: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmEncoder {
    pub config: EncoderConfig,
    pub prefix: String,
}

impl LmEncoder {
    pub fn new(config: EncoderConfig, prefix: impl Into<String>) -> Self {
        LmEncoder {
            config,
            prefix: prefix.into(),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SplitMix64) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let (p, d, dh) = (&self.prefix, c.hidden_dim, c.head_dim());
        store.init_normal(&format!("{p}.tok"), &[c.vocab_size, d], 0.1, rng);
        store.init_normal(&format!("{p}.pos"), &[c.max_len, d], 0.1, rng);
        for l in 0..c.num_layers {
            for h in 0..c.num_heads {
                // No key bias: it shifts every score in a row equally and
                // cancels in the softmax.
                nn::init_linear(store, &format!("{p}.l{l}.h{h}.q"), d, dh, rng);
                nn::init_projection(store, &format!("{p}.l{l}.h{h}.k"), d, dh, rng);
                nn::init_linear(store, &format!("{p}.l{l}.h{h}.v"), d, dh, rng);
            }
            nn::init_linear(store, &format!("{p}.l{l}.o"), d, d, rng);
            nn::init_layer_norm(store, &format!("{p}.l{l}.ln1"), d);
            nn::init_linear(store, &format!("{p}.l{l}.ff1"), d, c.ffn_dim, rng);
            nn::init_linear(store, &format!("{p}.l{l}.ff2"), c.ffn_dim, d, rng);
            nn::init_layer_norm(store, &format!("{p}.l{l}.ln2"), d);
        }
        nn::init_linear(store, &format!("{p}.mlm"), d, c.vocab_size, rng);
        Ok(())
    }

    /// Token plus learned positional embedding, `(B * L, d)`.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, batch: &EncodedBatch) -> Result<NodeId> {
        self.embed_ids(tape, store, &batch.ids, batch.batch, batch.len)
    }

    pub(crate) fn embed_ids(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ids: &[u32],
        batch: usize,
        len: usize,
    ) -> Result<NodeId> {
        let c = &self.config;
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= c.vocab_size) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "embed",
                index: bad as usize,
                len: c.vocab_size,
            });
        }
        if len > c.max_len {
            return Err(AutodiffError::IndexOutOfRange {
                op: "embed",
                index: len - 1,
                len: c.max_len,
            });
        }
        let tok = tape.param(store, &format!("{}.tok", self.prefix))?;
        let pos = tape.param(store, &format!("{}.pos", self.prefix))?;
        let t = tape.gather_rows(tok, ids.iter().map(|&i| i as usize).collect())?;
        let positions = (0..batch).flat_map(|_| 0..len).collect();
        let p = tape.gather_rows(pos, positions)?;
        tape.add(t, p)
    }

    /// `num_layers` post-LN blocks; `mask` is the flat `(B * L)` key mask.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        e_in: NodeId,
        batch: usize,
        len: usize,
        mask: &[bool],
    ) -> Result<Encoded> {
        let c = &self.config;
        let (p, dh) = (&self.prefix, c.head_dim());
        if mask.len() != batch * len || tape.shape(e_in) != [batch * len, c.hidden_dim] {
            return Err(AutodiffError::ShapeMismatch {
                op: "encode",
                left: tape.shape(e_in).to_vec(),
                right: vec![batch, len, mask.len()],
            });
        }
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = e_in;
        let mut attention = Vec::new();
        for l in 0..c.num_layers {
            let mut heads = Vec::with_capacity(c.num_heads);
            for h in 0..c.num_heads {
                let name = |m: &str| format!("{p}.l{l}.h{h}.{m}");
                let q = nn::linear(tape, store, &name("q"), x)?;
                let q = tape.scale(q, scale)?;
                let q = tape.reshape(q, vec![batch, len, dh])?;
                let k = nn::projection(tape, store, &name("k"), x)?;
                let k = tape.reshape(k, vec![batch, len, dh])?;
                let kt = tape.transpose(k)?;
                let v = nn::linear(tape, store, &name("v"), x)?;
                let v = tape.reshape(v, vec![batch, len, dh])?;
                let scores = tape.matmul(q, kt)?;
                let probs = tape.masked_softmax(scores, mask.to_vec())?;
                attention.push(probs);
                let o = tape.matmul(probs, v)?;
                heads.push(tape.reshape(o, vec![batch * len, dh])?);
            }
            let cat = tape.concat(&heads)?;
            let att = nn::linear(tape, store, &format!("{p}.l{l}.o"), cat)?;
            let res = tape.add(x, att)?;
            x = nn::layer_norm(tape, store, &format!("{p}.l{l}.ln1"), res)?;
            let f = nn::linear(tape, store, &format!("{p}.l{l}.ff1"), x)?;
            let f = tape.relu(f)?;
            let f = nn::linear(tape, store, &format!("{p}.l{l}.ff2"), f)?;
            let res = tape.add(x, f)?;
            x = nn::layer_norm(tape, store, &format!("{p}.l{l}.ln2"), res)?;
        }
        Ok(Encoded { output: x, attention })
    }

    /// Embed and encode in one call.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, batch: &EncodedBatch) -> Result<Encoded> {
        let e_in = self.embed(tape, store, batch)?;
        self.encode(tape, store, e_in, batch.batch, batch.len, &batch.mask)
    }

    /// Node embeddings `N` (all atoms of the batch, graph by graph) and the
    /// CLS graph embeddings `G` (one row per sequence).
    pub fn extract(&self, tape: &mut Tape, e_out: NodeId, batch: &EncodedBatch) -> Result<(NodeId, NodeId)> {
        if let Some(b) = batch.alignments.iter().position(|a| a.is_empty() || a.contains(&0)) {
            return Err(AutodiffError::InvalidInput {
                op: "extract",
                reason: format!("sequence {b} has no atom positions or points at CLS"),
            });
        }
        let nodes = tape.gather_rows(e_out, batch.flat_atom_positions())?;
        let cls = tape.gather_rows(e_out, (0..batch.batch).map(|b| b * batch.len).collect())?;
        Ok((nodes, cls))
    }

    /// CLS rows only, `(B, d)`.
    pub fn cls(&self, tape: &mut Tape, e_out: NodeId, batch: &EncodedBatch) -> Result<NodeId> {
        tape.gather_rows(e_out, (0..batch.batch).map(|b| b * batch.len).collect())
    }

    /// Mean over each sequence's real (unmasked) token rows, `(B, d)`.
    pub fn mean_readout(&self, tape: &mut Tape, e_out: NodeId, batch: &EncodedBatch) -> Result<NodeId> {
        let mut index = Vec::new();
        let mut offsets = vec![0];
        for b in 0..batch.batch {
            let row = batch.mask_row(b);
            index.extend((0..batch.len).filter(|&j| row[j]).map(|j| b * batch.len + j));
            offsets.push(index.len());
        }
        let real = tape.gather_rows(e_out, index)?;
        tape.segment_mean(real, &offsets)
    }
}

/// Two-layer perceptron `width -> hidden -> 1` with a relu in between.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictHead {
    pub prefix: String,
    pub in_width: usize,
    pub hidden: usize,
}

impl PredictHead {
    pub fn new(prefix: impl Into<String>, in_width: usize, hidden: usize) -> Self {
        PredictHead {
            prefix: prefix.into(),
            in_width,
            hidden,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SplitMix64) {
        nn::init_linear(store, &format!("{}.1", self.prefix), self.in_width, self.hidden, rng);
        nn::init_linear(store, &format!("{}.2", self.prefix), self.hidden, 1, rng);
    }

    /// `(B, in_width)` → `(B)` raw outputs (logits for classification).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.in_width {
            return Err(AutodiffError::InvalidInput {
                op: "predict-head",
                reason: format!("expected input width {}, got shape {shape:?}", self.in_width),
            });
        }
        let h = nn::linear(tape, store, &format!("{}.1", self.prefix), x)?;
        let h = tape.relu(h)?;
        let y = nn::linear(tape, store, &format!("{}.2", self.prefix), h)?;
        tape.reshape(y, vec![shape[0]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::smiles::{encode_batch, tokenize, Vocabulary};

    fn setup(layers: usize) -> (LmEncoder, ParamStore, Vocabulary) {
        let vocab = Vocabulary::build(["C1=CC=C(C=C1)O", "CCN"]);
        let mut cfg = EncoderConfig::new(vocab.len());
        cfg.hidden_dim = 8;
        cfg.num_heads = 2;
        cfg.ffn_dim = 16;
        cfg.num_layers = layers;
        let enc = LmEncoder::new(cfg, "lm");
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut SplitMix64::new(3)).unwrap();
        (enc, store, vocab)
    }

    #[test]
    fn phenol_shapes() {
        let (enc, store, vocab) = setup(2);
        let seq = tokenize("C1=CC=C(C=C1)O", &vocab).unwrap();
        let batch = encode_batch(&[&seq], 256).unwrap();
        let mut tape = Tape::new();
        let out = enc.run(&mut tape, &store, &batch).unwrap();
        assert_eq!(tape.shape(out.output), &[15, 8]);
        let (n, g) = enc.extract(&mut tape, out.output, &batch).unwrap();
        assert_eq!(tape.shape(n), &[7, 8]);
        assert_eq!(tape.value(g).data(), tape.value(out.output).row(0));
    }

    #[test]
    fn zero_layers_is_identity() {
        let (enc, store, vocab) = setup(0);
        let seq = tokenize("CCN", &vocab).unwrap();
        let batch = encode_batch(&[&seq], 256).unwrap();
        let mut tape = Tape::new();
        let e_in = enc.embed(&mut tape, &store, &batch).unwrap();
        let out = enc.encode(&mut tape, &store, e_in, 1, 4, &batch.mask).unwrap();
        let (n, _) = enc.extract(&mut tape, out.output, &batch).unwrap();
        assert_eq!(tape.value(n).data(), &tape.value(e_in).data()[8..]);
    }

    #[test]
    fn zero_weights_leave_layer_norms() {
        let (enc, mut store, vocab) = setup(1);
        for (name, t) in store.iter_mut() {
            if !name.starts_with("lm.tok") && !name.starts_with("lm.pos") && !name.contains(".ln") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let seq = tokenize("CCN", &vocab).unwrap();
        let batch = encode_batch(&[&seq], 256).unwrap();
        let mut tape = Tape::new();
        let e_in = enc.embed(&mut tape, &store, &batch).unwrap();
        let out = enc.encode(&mut tape, &store, e_in, 1, 4, &batch.mask).unwrap();
        let g = tape.constant(Tensor::full(&[8], 1.0));
        let b = tape.constant(Tensor::zeros(&[8]));
        let once = tape.layer_norm(e_in, g, b).unwrap();
        let twice = tape.layer_norm(once, g, b).unwrap();
        assert!(tape.value(out.output).max_abs_diff(tape.value(twice)) < 1e-12);
    }

    #[test]
    fn out_of_range_ids_rejected() {
        let (enc, store, _) = setup(1);
        let mut tape = Tape::new();
        assert!(enc.embed_ids(&mut tape, &store, &[0, 999], 1, 2).is_err());
    }

    #[test]
    fn head_checks_width() {
        let head = PredictHead::new("head", 4, 3);
        let mut store = ParamStore::new();
        head.init(&mut store, &mut SplitMix64::new(0));
        for (_, t) in store.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        store.get_mut("head.2.b").unwrap().data_mut()[0] = 0.75;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 4], 1.0));
        let y = head.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.75, 0.75]);
        let bad = tape.constant(Tensor::full(&[2, 8], 1.0));
        let err = head.forward(&mut tape, &store, bad).unwrap_err();
        assert!(err.to_string().contains("expected input width 4"), "{err}");
    }
}
