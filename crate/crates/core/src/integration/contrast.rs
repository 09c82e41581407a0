use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, NodeId, Result, Tape};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub margin: f64,
    /// Node-level weight α.
    pub alpha: f64,
    /// Graph-level weight α′.
    pub alpha_graph: f64,
    /// Triples per chunk; `None` means one chunk holding every triple.
    pub chunk: Option<usize>,
    /// Draw node negatives from other graphs instead of a within-graph derangement.
    pub cross_graph: bool,
    /// Block gradients into the MPNN through positives and negatives.
    pub frozen_mpnn: bool,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            margin: 1.0,
            alpha: 0.1,
            alpha_graph: 0.1,
            chunk: None,
            cross_graph: false,
            frozen_mpnn: false,
        }
    }
}

/// Row indices of anchors (LM side), positives and negatives (MPNN side).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Triples {
    pub anchor: Vec<usize>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    /// Triples dropped because no valid negative existed.
    pub skipped: usize,
}

impl Triples {
    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }
}

/// Uniform random derangement of `0..n` (rejection sampling over
/// Fisher-Yates shuffles). `n` must be at least 2.
pub fn derangement(n: usize, rng: &mut SplitMix64) -> Vec<usize> {
    assert!(n >= 2, "no derangement of {n} elements");
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        rng.shuffle(&mut p);
        if p.iter().enumerate().all(|(i, &v)| i != v) {
            return p;
        }
    }
}

/// Node-level triples: `a_i = lm[i]`, `p_i = mpnn[i]`, `n_i = mpnn[π(i)]`
/// with `π` a seeded derangement inside each graph. A single-node graph takes
/// a uniformly chosen node of another graph; if there is none the triple is
/// skipped and counted. With `cross_graph`, every negative comes from another
/// graph when the batch has more than one.
pub fn build_triples(
    lm_rows: usize,
    mpnn_rows: usize,
    offsets: &[usize],
    seed: u64,
    cross_graph: bool,
) -> Result<Triples> {
    if lm_rows != mpnn_rows || offsets.last() != Some(&lm_rows) {
        return Err(AutodiffError::InvalidInput {
            op: "build-triples",
            reason: format!(
                "{lm_rows} LM rows, {mpnn_rows} MPNN rows, boundaries end at {:?}",
                offsets.last()
            ),
        });
    }
    let mut rng = SplitMix64::new(seed);
    let mut t = Triples::default();
    let graphs = offsets.len() - 1;
    for g in 0..graphs {
        let (lo, hi) = (offsets[g], offsets[g + 1]);
        let n = hi - lo;
        let outside = lm_rows - n;
        let other = |rng: &mut SplitMix64| {
            let k = rng.below(outside);
            if k < lo {
                k
            } else {
                k + n
            }
        };
        if cross_graph && outside > 0 {
            for i in lo..hi {
                t.anchor.push(i);
                t.positive.push(i);
                t.negative.push(other(&mut rng));
            }
        } else if n >= 2 {
            let pi = derangement(n, &mut rng);
            for (i, &j) in pi.iter().enumerate() {
                t.anchor.push(lo + i);
                t.positive.push(lo + i);
                t.negative.push(lo + j);
            }
        } else if outside > 0 {
            t.anchor.push(lo);
            t.positive.push(lo);
            t.negative.push(other(&mut rng));
        } else {
            t.skipped += n;
        }
    }
    Ok(t)
}

/// Graph-level triples: anchor and positive are graph `m`, the negative is
/// graph `π(m)` for a seeded derangement. Fewer than two graphs → empty.
pub fn build_graph_triples(graphs: usize, seed: u64) -> Triples {
    if graphs < 2 {
        return Triples {
            skipped: graphs,
            ..Triples::default()
        };
    }
    let pi = derangement(graphs, &mut SplitMix64::new(seed));
    Triples {
        anchor: (0..graphs).collect(),
        positive: (0..graphs).collect(),
        negative: pi,
        skipped: 0,
    }
}

/// `Σ max(‖a − p‖₂ − ‖a − n‖₂ + margin, 0)` over all triples, on the tape.
pub fn triplet_loss(
    tape: &mut Tape,
    anchors: NodeId,
    targets: NodeId,
    triples: &Triples,
    margin: f64,
) -> Result<NodeId> {
    if triples.is_empty() {
        return Err(AutodiffError::InvalidInput {
            op: "triplet-loss",
            reason: "no triples".into(),
        });
    }
    let a = tape.gather_rows(anchors, triples.anchor.clone())?;
    let p = tape.gather_rows(targets, triples.positive.clone())?;
    let n = tape.gather_rows(targets, triples.negative.clone())?;
    let dap = tape.pnorm_diff(a, p)?;
    let dan = tape.pnorm_diff(a, n)?;
    let diff = tape.sub(dap, dan)?;
    let shifted = tape.add_scalar(diff, margin)?;
    let hinge = tape.relu(shifted)?;
    tape.sum_all(hinge)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-triple hinge on explicit vectors.
pub fn triplet_term(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    (distance(a, p) - distance(a, n) + margin).max(0.0)
}

/// Chunked form `Σ_i Σ_{j<K} L(t_{K·i + j})`, accumulated in index order.
pub fn triplet_loss_chunked(terms: &[(Vec<f64>, Vec<f64>, Vec<f64>)], margin: f64, k: usize) -> f64 {
    assert!(k >= 1);
    let mut total = 0.0;
    for i in 0..terms.len().div_ceil(k) {
        for j in 0..k {
            if let Some((a, p, n)) = terms.get(k * i + j) {
                total += triplet_term(a, p, n, margin);
            }
        }
    }
    total
}
