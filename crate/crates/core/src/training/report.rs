use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::{prepare, train_one, PreparedData, SeedReport};
use super::TrainError;
use crate::dataset::TaskKind;
use crate::integration::{Model, Strategy};

/// Environment variable holding the number of parallel seed workers.
pub const WORKERS_ENV: &str = "MOLFUSE_WORKERS";

/// Mean and sample (n − 1) standard deviation; a single value has std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `"0.5529 ± 0.0332"`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.4} ± {std:.4}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub dataset: String,
    pub task: TaskKind,
    pub metric: String,
    pub seeds: Vec<SeedReport>,
    /// Aggregates over successful seeds only.
    pub mean: f64,
    pub std: f64,
    pub successes: usize,
    /// Set when any seed failed; the aggregate then covers fewer seeds.
    pub partial: bool,
    pub quarantined_rows: usize,
    pub stereo_rows: usize,
    pub unknown_tokens: usize,
}

impl RunReport {
    pub fn from_seeds(cfg: &RunConfig, data: &PreparedData, seeds: Vec<SeedReport>) -> Self {
        let ok: Vec<f64> = seeds.iter().filter(|s| s.succeeded()).filter_map(|s| s.test_metric).collect();
        let (mean, std) = mean_std(&ok);
        RunReport {
            strategy: cfg.strategy,
            dataset: cfg.dataset.display().to_string(),
            task: cfg.task,
            metric: cfg.task.metric_name().to_string(),
            successes: ok.len(),
            partial: ok.len() < seeds.len(),
            seeds,
            mean,
            std,
            quarantined_rows: data.quarantined(),
            stereo_rows: data.loaded.stereo_rows,
            unknown_tokens: data.unknown_tokens,
        }
    }

    pub fn summary(&self) -> String {
        format_mean_std(self.mean, self.std)
    }

    /// Aligned human-readable table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "strategy: {}  dataset: {}  task: {}", self.strategy, self.dataset, self.task);
        let _ = writeln!(
            s,
            "{:>6}  {:>10}  {:>10}  {:>10}  {:>6}  {:>6}  status",
            "seed",
            format!("test {}", self.metric),
            "valid",
            "naive",
            "best",
            "epochs"
        );
        let num = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        for r in &self.seeds {
            let _ = writeln!(
                s,
                "{:>6}  {:>10}  {:>10}  {:>10.4}  {:>6}  {:>6}  {}",
                r.seed,
                num(r.test_metric),
                num(r.best_valid_metric),
                r.naive_baseline,
                r.best_epoch.map_or_else(|| "-".into(), |e| e.to_string()),
                r.epochs_run,
                r.failure.as_deref().unwrap_or("ok")
            );
        }
        let _ = writeln!(
            s,
            "{} over {} seed(s): {}{}",
            self.metric,
            self.successes,
            self.summary(),
            if self.partial { "  (some seeds failed)" } else { "" }
        );
        let _ = writeln!(
            s,
            "quarantined rows: {}  stereo rows: {}  unknown tokens: {}",
            self.quarantined_rows, self.stereo_rows, self.unknown_tokens
        );
        s
    }

    /// One JSON object per seed.
    pub fn json_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.seeds {
            let mut v = serde_json::to_value(r).expect("seed report serializes");
            v["strategy"] = self.strategy.name().into();
            v["dataset"] = self.dataset.clone().into();
            v["metric"] = self.metric.clone().into();
            s.push_str(&v.to_string());
            s.push('\n');
        }
        s
    }

    /// One JSON object per seed holding its epoch wall times.
    pub fn timing_lines(&self) -> String {
        self.seeds
            .iter()
            .map(|r| serde_json::json!({"seed": r.seed, "epoch_seconds": r.epoch_seconds}).to_string() + "\n")
            .collect()
    }
}

/// Worker count from [`WORKERS_ENV`], defaulting to 1.
pub fn workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Train every seed (in parallel when more than one worker is configured);
/// results keep the configured seed order.
pub fn run_seeds_on(cfg: &RunConfig, data: &PreparedData) -> Result<(RunReport, Vec<Model>), TrainError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers())
        .build()
        .map_err(|e| TrainError::Workers(e.to_string()))?;
    let results: Vec<Result<(Model, SeedReport), TrainError>> =
        pool.install(|| cfg.seeds.par_iter().map(|&s| train_one(cfg, data, s)).collect());
    let mut models = Vec::new();
    let mut seeds = Vec::new();
    for r in results {
        let (m, s) = r?;
        models.push(m);
        seeds.push(s);
    }
    Ok((RunReport::from_seeds(cfg, data, seeds), models))
}

pub fn run_seeds(cfg: &RunConfig) -> Result<(RunReport, Vec<Model>, PreparedData), TrainError> {
    let data = prepare(cfg)?;
    let (report, models) = run_seeds_on(cfg, &data)?;
    Ok((report, models, data))
}
