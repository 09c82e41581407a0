use log::warn;

use super::LmEncoder;
use crate::autodiff::{AdamState, NodeId, ParamStore, Result, Tape};
use crate::nn;
use crate::rng::SplitMix64;
use crate::smiles::{encode_batch, TokenSequence, Vocabulary};

/// Replaces `round(mask_rate * n)` of the `n` non-special tokens (chosen by a
/// seeded shuffle) with MASK and returns the summed cross-entropy of the
/// original ids at those positions, or `None` if nothing was masked.
fn build(
    enc: &LmEncoder,
    tape: &mut Tape,
    store: &ParamStore,
    seqs: &[&TokenSequence],
    mask_rate: f64,
    seed: u64,
) -> Result<Option<NodeId>> {
    let batch = encode_batch(seqs, enc.config.max_len).map_err(|e| crate::autodiff::AutodiffError::InvalidInput {
        op: "mlm",
        reason: e.to_string(),
    })?;
    let mut candidates: Vec<usize> = (0..batch.ids.len())
        .filter(|&i| batch.mask[i] && batch.ids[i] != Vocabulary::CLS_ID)
        .collect();
    let k = (mask_rate * candidates.len() as f64).round() as usize;
    if k == 0 {
        return Ok(None);
    }
    SplitMix64::new(seed).shuffle(&mut candidates);
    let mut chosen = candidates[..k].to_vec();
    chosen.sort_unstable();
    let mut ids = batch.ids.clone();
    let targets: Vec<usize> = chosen.iter().map(|&i| batch.ids[i] as usize).collect();
    for &i in &chosen {
        ids[i] = Vocabulary::MASK_ID;
    }
    let e_in = enc.embed_ids(tape, store, &ids, batch.batch, batch.len)?;
    let out = enc.encode(tape, store, e_in, batch.batch, batch.len, &batch.mask)?;
    let rows = tape.gather_rows(out.output, chosen)?;
    let logits = nn::linear(tape, store, &format!("{}.mlm", enc.prefix), rows)?;
    tape.cross_entropy(logits, targets).map(Some)
}

/// MLM loss on a batch without updating anything.
pub fn mlm_loss(
    enc: &LmEncoder,
    store: &ParamStore,
    seqs: &[&TokenSequence],
    mask_rate: f64,
    seed: u64,
) -> Result<Option<f64>> {
    let mut tape = Tape::new();
    Ok(build(enc, &mut tape, store, seqs, mask_rate, seed)?.map(|l| tape.value(l).item()))
}

/// One Adam step on the encoder's parameters (those under its prefix) for the
/// MLM objective. Returns the pre-step loss, or `None` when no token could be
/// masked (the step is skipped).
pub fn mlm_pretrain_step(
    enc: &LmEncoder,
    store: &mut ParamStore,
    adam: &mut AdamState,
    seqs: &[&TokenSequence],
    mask_rate: f64,
    seed: u64,
) -> Result<Option<f64>> {
    let sub = store.subset(&format!("{}.", enc.prefix));
    let mut tape = Tape::new();
    tape.bind_all(&sub);
    let Some(loss) = build(enc, &mut tape, &sub, seqs, mask_rate, seed)? else {
        warn!("MLM batch has no maskable tokens; step skipped");
        return Ok(None);
    };
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let grads = tape.param_grads(&grads);
    let mut sub = sub;
    adam.step(&mut sub, &grads)?;
    store.merge(&sub);
    Ok(Some(value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::AdamConfig;
    use crate::lm::EncoderConfig;
    use crate::smiles::tokenize;

    fn small(vocab: &Vocabulary) -> (LmEncoder, ParamStore) {
        let mut cfg = EncoderConfig::new(vocab.len());
        cfg.hidden_dim = 8;
        cfg.num_heads = 2;
        cfg.ffn_dim = 16;
        cfg.num_layers = 1;
        let enc = LmEncoder::new(cfg, "lm");
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut SplitMix64::new(1)).unwrap();
        (enc, store)
    }

    #[test]
    fn zero_rate_skips() {
        let vocab = Vocabulary::build(["CCO"]);
        let (enc, mut store) = small(&vocab);
        let seq = tokenize("CCO", &vocab).unwrap();
        let mut adam = AdamState::new(AdamConfig::default());
        let before = store.clone();
        assert_eq!(mlm_pretrain_step(&enc, &mut store, &mut adam, &[&seq], 0.0, 0).unwrap(), None);
        assert_eq!(store, before);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn repeated_token_corpus_is_learned() {
        let vocab = Vocabulary::build(["CCCCCCCC"]);
        let (enc, mut store) = small(&vocab);
        let seq = tokenize("CCCCCCCC", &vocab).unwrap();
        let batch = vec![&seq; 4];
        let mut adam = AdamState::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() });
        let first = mlm_loss(&enc, &store, &batch, 0.25, 0).unwrap().unwrap();
        for step in 0..150 {
            mlm_pretrain_step(&enc, &mut store, &mut adam, &batch, 0.25, step).unwrap();
        }
        let last = mlm_loss(&enc, &store, &batch, 0.25, 999).unwrap().unwrap();
        assert!(last < 0.01 * first, "{first} -> {last}");
        assert!(last / 8.0 < 0.01);
    }

    #[test]
    fn small_steps_descend() {
        let corpus = ["CCO", "c1ccccc1O", "CC(=O)O", "CCN", "ClCCl", "C1CC1", "CC#N", "OCCO"];
        let vocab = Vocabulary::build(corpus);
        let (enc, mut store) = small(&vocab);
        let seqs: Vec<TokenSequence> = corpus.iter().map(|s| tokenize(s, &vocab).unwrap()).collect();
        let refs: Vec<&TokenSequence> = seqs.iter().collect();
        let mut adam = AdamState::new(AdamConfig { lr: 1e-3, ..AdamConfig::default() });
        let mut improved = 0;
        for step in 0..10 {
            let before = mlm_loss(&enc, &store, &refs, 0.3, step).unwrap().unwrap();
            mlm_pretrain_step(&enc, &mut store, &mut adam, &refs, 0.3, step).unwrap();
            let after = mlm_loss(&enc, &store, &refs, 0.3, step).unwrap().unwrap();
            improved += (after <= before) as usize;
        }
        assert!(improved > 5, "{improved}/10");
    }
}
