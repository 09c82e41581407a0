use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, KNOWN_LABEL_COLUMNS};
use super::TrainError;
use crate::autodiff::{AdamConfig, AdamState, ParamStore, Tape};
use crate::dataset::{batch_iter, load_csv, naive_baseline, split, DatasetError, LoadedDataset, QuarantineEntry, SplitSpec, TaskKind};
use crate::integration::{Batch, Model, Sample};
use crate::lm::mlm_pretrain_step;
use crate::rng::SplitMix64;
use crate::smiles::{TokenSequence, Vocabulary};

const EVAL_BATCH: usize = 64;

/// Resolve `auto` to the first known label column in the file's header.
pub fn detect_label_column(path: &Path, requested: &str) -> Result<String, DatasetError> {
    if requested != "auto" {
        return Ok(requested.to_string());
    }
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    KNOWN_LABEL_COLUMNS
        .iter()
        .find(|k| headers.iter().any(|h| h == *k))
        .map(|k| k.to_string())
        .ok_or(DatasetError::MissingColumn {
            column: "auto".into(),
            available: headers,
        })
}

/// A loaded, featurized dataset shared by every seed of a run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub loaded: LoadedDataset,
    pub vocab: Vocabulary,
    pub samples: Vec<Sample>,
    /// Rows dropped after loading (e.g. longer than the configured max_len).
    pub extra_quarantine: Vec<QuarantineEntry>,
    pub unknown_tokens: usize,
}

impl PreparedData {
    pub fn quarantined(&self) -> usize {
        self.loaded.quarantine.len() + self.extra_quarantine.len()
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<PreparedData, TrainError> {
    let label = detect_label_column(&cfg.dataset, &cfg.label_column)?;
    let mut loaded = load_csv(&cfg.dataset, &cfg.smiles_column, &label, cfg.task)?;
    if let Some(n) = cfg.limit {
        loaded.records.truncate(n);
    }
    // The vocabulary is the token inventory of every loaded SMILES; no labels
    // are involved, so building it before the split leaks nothing.
    let vocab = Vocabulary::build(loaded.records.iter().map(|r| r.smiles.as_str()));
    let mut samples = Vec::with_capacity(loaded.records.len());
    let mut extra = Vec::new();
    let mut unknown = 0;
    for r in &loaded.records {
        let s = Sample::new(&r.smiles, r.label, &vocab)?;
        if s.tokens.len() > cfg.max_len {
            extra.push(QuarantineEntry {
                row_index: r.row_index,
                reason: format!("{} tokens exceed max_len {}", s.tokens.len(), cfg.max_len),
            });
            continue;
        }
        unknown += s.tokens.unknown_tokens;
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(DatasetError::Empty(cfg.dataset.clone()).into());
    }
    info!(
        "{}: {} samples, {} quarantined, vocabulary {}",
        cfg.dataset.display(),
        samples.len(),
        loaded.quarantine.len() + extra.len(),
        vocab.len()
    );
    Ok(PreparedData {
        loaded,
        vocab,
        samples,
        extra_quarantine: extra,
        unknown_tokens: unknown,
    })
}

/// Regression: mean |ŷ − y|. Classification: fraction of `(p >= 0.5) == y`.
pub fn metric(predictions: &[f64], labels: &[f64], task: TaskKind) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    assert!(!labels.is_empty(), "metric of an empty subset");
    let n = labels.len() as f64;
    match task {
        TaskKind::Regression => predictions.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / n,
        TaskKind::BinaryClassification => {
            let hits = predictions
                .iter()
                .zip(labels)
                .filter(|(p, y)| (**p >= 0.5) == (**y >= 0.5))
                .count();
            hits as f64 / n
        }
    }
}

/// Whether `a` is strictly better than `b` for this task.
pub fn improves(a: f64, b: f64, task: TaskKind) -> bool {
    if task.higher_is_better() {
        a > b
    } else {
        a < b
    }
}

pub fn predict_all(model: &Model, samples: &[&Sample], max_len: usize) -> Result<Vec<f64>, TrainError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let b = Batch::new(chunk, max_len)?;
        out.extend(model.predict(&b)?);
    }
    Ok(out)
}

pub fn evaluate(model: &Model, samples: &[&Sample], max_len: usize) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptySubset("evaluation subset").into());
    }
    let preds = predict_all(model, samples, max_len)?;
    let labels: Vec<f64> = samples.iter().map(|s| s.label).collect();
    Ok(metric(&preds, &labels, model.config.task))
}

fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    SplitMix64::derive(seed, ((epoch as u64) << 32) | batch as u64).next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub skipped_triples: usize,
    pub seconds: f64,
}

/// Owns a model and its optimizer for one seed; one call to
/// [`run_epoch`](Self::run_epoch) is one pass over the training subset.
pub struct Trainer<'a> {
    pub model: Model,
    pub epoch: usize,
    cfg: &'a RunConfig,
    adam: AdamState,
    train: Vec<&'a Sample>,
    seed: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a RunConfig, vocab: &Vocabulary, train: Vec<&'a Sample>, seed: u64) -> Result<Self, TrainError> {
        let mut model = Model::new(cfg.model_config(vocab.len()), seed)?;
        let labels: Vec<f64> = train.iter().map(|s| s.label).collect();
        model.fit_labels(&labels);
        let adam = AdamState::new(AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        });
        let mut t = Trainer {
            model,
            epoch: 0,
            cfg,
            adam,
            train,
            seed,
        };
        if cfg.mlm_pretrain && cfg.strategy.uses_lm() {
            t.pretrain()?;
        }
        Ok(t)
    }

    fn pretrain(&mut self) -> Result<(), TrainError> {
        let mut adam = AdamState::new(AdamConfig {
            lr: self.cfg.lr,
            ..AdamConfig::default()
        });
        let lm = self.model.lm().clone();
        for e in 0..self.cfg.mlm_epochs {
            let order = batch_iter(self.train.len(), self.cfg.batch_size, SplitMix64::derive(self.seed, 0x6d6c6d ^ e as u64).next_u64());
            let mut total = 0.0;
            for (i, idx) in order.iter().enumerate() {
                let seqs: Vec<&TokenSequence> = idx.iter().map(|&j| &self.train[j].tokens).collect();
                let s = batch_seed(self.seed ^ 0x6d6c6d, e, i);
                if let Some(l) = mlm_pretrain_step(&lm, &mut self.model.params, &mut adam, &seqs, self.cfg.mlm_rate, s)? {
                    total += l;
                }
            }
            info!("mlm epoch {e}: loss {total:.4}");
        }
        Ok(())
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats, TrainError> {
        let start = Instant::now();
        let order = batch_iter(self.train.len(), self.cfg.batch_size, SplitMix64::derive(self.seed, self.epoch as u64).next_u64());
        let mut total = 0.0;
        let mut skipped = 0;
        for (i, idx) in order.iter().enumerate() {
            let samples: Vec<&Sample> = idx.iter().map(|&j| self.train[j]).collect();
            let batch = Batch::new(&samples, self.cfg.max_len)?;
            let mut tape = Tape::new();
            tape.bind_all(&self.model.params);
            let (loss, fwd) = self.model.loss(&mut tape, &self.model.params, &batch, batch_seed(self.seed, self.epoch, i))?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(TrainError::Diverged { epoch: self.epoch, batch: i });
            }
            skipped += fwd.skipped_triples;
            let grads = tape.backward(loss)?;
            let grads = tape.param_grads(&grads);
            self.adam.step(&mut self.model.params, &grads)?;
            total += value;
        }
        self.epoch += 1;
        Ok(EpochStats {
            loss: total,
            skipped_triples: skipped,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Outcome of one seed. Wall times are kept out of the serialized record so
/// that reports are bitwise reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub test_metric: Option<f64>,
    pub best_valid_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub naive_baseline: f64,
    pub sizes: (usize, usize, usize),
    pub skipped_triples: usize,
    pub failure: Option<String>,
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

impl SeedReport {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && self.test_metric.is_some()
    }
}

/// Split by `seed`, train with early stopping on the validation metric and
/// score the best-validation snapshot on the test subset.
pub fn train_one(cfg: &RunConfig, data: &PreparedData, seed: u64) -> Result<(Model, SeedReport), TrainError> {
    let refs: Vec<&Sample> = data.samples.iter().collect();
    let parts = split(&refs, &SplitSpec::new(cfg.split.0, cfg.split.1, cfg.split.2, seed))?;
    let labels = |s: &[&Sample]| s.iter().map(|x| x.label).collect::<Vec<_>>();
    let naive = naive_baseline(&labels(&parts.train), &labels(&parts.test), cfg.task)?;
    let task = cfg.task;

    let mut trainer = Trainer::new(cfg, &data.vocab, parts.train.clone(), seed)?;
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut report = SeedReport {
        seed,
        test_metric: None,
        best_valid_metric: None,
        best_epoch: None,
        epochs_run: 0,
        naive_baseline: naive,
        sizes: (parts.train.len(), parts.valid.len(), parts.test.len()),
        skipped_triples: 0,
        failure: None,
        epoch_seconds: Vec::new(),
    };
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        let stats = match trainer.run_epoch() {
            Ok(s) => s,
            Err(e @ TrainError::Diverged { .. }) => {
                warn!("seed {seed}: {e}");
                report.failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        report.epochs_run += 1;
        report.skipped_triples += stats.skipped_triples;
        report.epoch_seconds.push(stats.seconds);
        let valid = evaluate(&trainer.model, &parts.valid, cfg.max_len)?;
        info!(
            "seed {seed} epoch {epoch}: loss {:.4}, valid {} {valid:.4} ({:.1}s)",
            stats.loss,
            task.metric_name(),
            stats.seconds
        );
        if best.as_ref().is_none_or(|(b, _, _)| improves(valid, *b, task)) {
            best = Some((valid, epoch, trainer.model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                info!("seed {seed}: early stop after epoch {epoch}");
                break;
            }
        }
    }
    let mut model = trainer.model;
    if let Some((valid, epoch, params)) = best {
        model.params = params;
        report.best_valid_metric = Some(valid);
        report.best_epoch = Some(epoch);
        if report.failure.is_none() {
            report.test_metric = Some(evaluate(&model, &parts.test, cfg.max_len)?);
        }
    } else if report.failure.is_none() {
        report.failure = Some("no epoch completed".into());
    }
    Ok((model, report))
}
