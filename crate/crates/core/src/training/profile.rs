use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use super::config::RunConfig;
use super::train::{PreparedData, Trainer};
use super::TrainError;
use crate::autodiff::{ParamStore, Tape};
use crate::dataset::{split, SplitSpec};
use crate::integration::{Sample, Strategy};
use crate::lm::{EncoderConfig, LmEncoder};
use crate::nn;
use crate::rng::SplitMix64;
use crate::smiles::{encode_batch, tokenize, Vocabulary};

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub strategy: Strategy,
    pub epoch_seconds: Vec<f64>,
    pub median_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub claim: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileReport {
    pub rows: Vec<ProfileRow>,
    pub verdicts: Vec<Verdict>,
}

impl ProfileReport {
    pub fn median_of(&self, s: Strategy) -> Option<f64> {
        self.rows.iter().find(|r| r.strategy == s).map(|r| r.median_seconds)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16}  {:>14}  epochs (s)", "strategy", "median epoch s");
        for r in &self.rows {
            let times: Vec<String> = r.epoch_seconds.iter().map(|t| format!("{t:.3}")).collect();
            let _ = writeln!(s, "{:<16}  {:>14.3}  {}", r.strategy.name(), r.median_seconds, times.join(" "));
        }
        for v in &self.verdicts {
            let _ = writeln!(s, "[{}] {}: {}", if v.holds { "holds" } else { "VIOLATED" }, v.claim, v.detail);
        }
        s
    }

    pub fn json_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r).expect("row serializes"));
            s.push('\n');
        }
        for v in &self.verdicts {
            s.push_str(&serde_json::to_string(v).expect("verdict serializes"));
            s.push('\n');
        }
        s
    }
}

fn ordering(report: &ProfileReport, fast: Strategy, slow: Strategy, claim: &str) -> Option<Verdict> {
    let (f, s) = (report.median_of(fast)?, report.median_of(slow)?);
    Some(Verdict {
        claim: claim.to_string(),
        holds: f <= s,
        detail: format!("{fast} {f:.3}s vs {slow} {s:.3}s"),
    })
}

/// Median training-epoch wall time per strategy over `measured` epochs after
/// `warmup` unmeasured ones. Epochs are interleaved across strategies so that
/// machine-load drift affects every strategy alike.
pub fn profile(
    cfg: &RunConfig,
    data: &PreparedData,
    strategies: &[Strategy],
    warmup: usize,
    measured: usize,
) -> Result<ProfileReport, TrainError> {
    let seed = cfg.seeds[0];
    let refs: Vec<&Sample> = data.samples.iter().collect();
    let parts = split(&refs, &SplitSpec::new(cfg.split.0, cfg.split.1, cfg.split.2, seed))?;
    let configs: Vec<RunConfig> = strategies
        .iter()
        .map(|&s| RunConfig {
            strategy: s,
            mlm_pretrain: false,
            ..cfg.clone()
        })
        .collect();
    let mut trainers = configs
        .iter()
        .map(|c| Trainer::new(c, &data.vocab, parts.train.clone(), seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mut times = vec![Vec::with_capacity(measured); strategies.len()];
    for round in 0..warmup + measured {
        for (i, t) in trainers.iter_mut().enumerate() {
            let stats = t.run_epoch()?;
            if round >= warmup {
                times[i].push(stats.seconds);
            }
        }
    }
    let rows: Vec<ProfileRow> = strategies
        .iter()
        .zip(times)
        .map(|(&strategy, epoch_seconds)| ProfileRow {
            strategy,
            median_seconds: median(&epoch_seconds),
            epoch_seconds,
        })
        .collect();
    let mut report = ProfileReport {
        rows,
        verdicts: Vec::new(),
    };
    let checks = [
        ordering(
            &report,
            Strategy::ContrastGraph,
            Strategy::ContrastNode,
            "graph-level contrast is no slower than node-level",
        ),
        ordering(
            &report,
            Strategy::LateFusion,
            Strategy::Lm2Mpnn,
            "lm2mpnn is no faster than late fusion",
        ),
    ];
    report.verdicts = checks.into_iter().flatten().collect();
    if let (Some(lm), Some(mp)) = (report.median_of(Strategy::LmBaseline), report.median_of(Strategy::MpnnBaseline)) {
        report.verdicts.push(Verdict {
            claim: "lm vs mpnn baseline (no required ordering)".into(),
            holds: true,
            detail: format!("lm {lm:.3}s, mpnn {mp:.3}s"),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub seq_len: usize,
    pub median_seconds: f64,
    /// Time relative to the previous (half-length) row.
    pub ratio: Option<f64>,
}

/// Time the attention core (scores, masked softmax, weighted values; forward
/// and backward) of one head of width `d` on synthetic carbon chains whose
/// token counts are `lengths`. Quadratic cost predicts a ratio of 4 per
/// doubling.
pub fn attention_scaling(lengths: &[usize], d: usize, reps: usize, seed: u64) -> Result<Vec<ScalingRow>, TrainError> {
    let vocab = Vocabulary::from_tokens(["C"]);
    let max = *lengths.iter().max().unwrap_or(&1);
    let mut enc_cfg = EncoderConfig::new(vocab.len());
    enc_cfg.hidden_dim = d;
    enc_cfg.num_heads = 1;
    enc_cfg.num_layers = 1;
    enc_cfg.max_len = max;
    let enc = LmEncoder::new(enc_cfg, "lm");
    let mut store = ParamStore::new();
    let mut rng = SplitMix64::new(seed);
    enc.init(&mut store, &mut rng)?;

    let mut rows: Vec<ScalingRow> = Vec::new();
    for &n in lengths {
        // CLS plus n - 1 atoms.
        let chain = "C".repeat(n.saturating_sub(1).max(1));
        let seq = tokenize(&chain, &vocab)?;
        let batch = encode_batch(&[&seq], max)?;
        let len = seq.len();
        let mut scratch = Tape::new();
        let x = enc.embed_ids(&mut scratch, &store, &batch.ids[..len], 1, len)?;
        let mut proj = Vec::new();
        for m in ["q", "k", "v"] {
            let name = format!("lm.l0.h0.{m}");
            let y = if m == "k" {
                nn::projection(&mut scratch, &store, &name, x)?
            } else {
                nn::linear(&mut scratch, &store, &name, x)?
            };
            proj.push(scratch.value(y).clone().reshaped(vec![1, len, d])?);
        }
        let mut samples = Vec::with_capacity(reps + 1);
        for _ in 0..reps + 1 {
            let mut tape = Tape::new();
            let q = tape.variable(proj[0].clone());
            let k = tape.variable(proj[1].clone());
            let v = tape.variable(proj[2].clone());
            let start = Instant::now();
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let probs = tape.masked_softmax(scores, vec![true; len])?;
            let out = tape.matmul(probs, v)?;
            let loss = tape.sum_all(out)?;
            tape.backward(loss)?;
            samples.push(start.elapsed().as_secs_f64());
        }
        // The first repetition warms caches and is dropped.
        let m = median(&samples[1..]);
        let ratio = rows.last().map(|p| m / p.median_seconds);
        rows.push(ScalingRow {
            seq_len: len,
            median_seconds: m,
            ratio,
        });
    }
    Ok(rows)
}

/// Per-doubling time ratio `2^slope` from a least-squares fit of
/// `log2(time)` on `log2(seq_len)`; less sensitive to a single noisy length
/// than consecutive ratios.
pub fn fitted_doubling_ratio(rows: &[ScalingRow]) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.seq_len as f64).log2(), r.median_seconds.log2()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| 2f64.powf(sxy / sxx))
}

pub fn scaling_table(rows: &[ScalingRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>8}  {:>14}  {:>8}", "seq_len", "median s", "ratio");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>8}  {:>14.6}  {:>8}",
            r.seq_len,
            r.median_seconds,
            r.ratio.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
        );
    }
    if let Some(f) = fitted_doubling_ratio(rows) {
        let _ = writeln!(
            s,
            "fitted time ratio per doubling: {f:.2} (quadratic predicts 4; accepted range 2.0-6.0: {})",
            if (2.0..=6.0).contains(&f) { "holds" } else { "VIOLATED" }
        );
    }
    s
}
