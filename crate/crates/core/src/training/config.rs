use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::TaskKind;
use crate::gnn::{GnnVariant, UpdateKind};
use crate::integration::{FusionOp, ModelConfig, Strategy};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown key '{key}'; valid keys: {}", KEYS.join(", "))]
    UnknownKey { key: String },
    #[error("bad value '{value}' for '{key}': {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("cannot read config {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

/// Every key accepted by [`RunConfig::set`] and config files.
pub const KEYS: &[&str] = &[
    "strategy",
    "dataset",
    "task",
    "smiles_column",
    "label_column",
    "split",
    "seeds",
    "lr",
    "batch_size",
    "max_epochs",
    "patience",
    "fusion",
    "alpha",
    "alpha_graph",
    "margin",
    "cross_graph",
    "frozen_mpnn",
    "gnn",
    "gnn_update",
    "message_steps",
    "hidden_dim",
    "num_layers",
    "num_heads",
    "ffn_dim",
    "max_len",
    "mlm_pretrain",
    "mlm_epochs",
    "mlm_rate",
    "limit",
];

/// Label columns recognised when `label_column = auto`.
pub const KNOWN_LABEL_COLUMNS: &[&str] = &[
    "measured log solubility in mols per litre",
    "expt",
    "p_np",
    "label",
    "y",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub dataset: PathBuf,
    pub task: TaskKind,
    pub smiles_column: String,
    /// `auto` picks the first of [`KNOWN_LABEL_COLUMNS`] present.
    pub label_column: String,
    pub split: (f64, f64, f64),
    pub seeds: Vec<u64>,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub fusion: FusionOp,
    pub alpha: f64,
    pub alpha_graph: f64,
    pub margin: f64,
    pub cross_graph: bool,
    pub frozen_mpnn: bool,
    pub gnn: GnnVariant,
    pub gnn_update: UpdateKind,
    pub message_steps: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub mlm_pretrain: bool,
    pub mlm_epochs: usize,
    pub mlm_rate: f64,
    /// Keep only the first `limit` loaded records (smoke runs).
    pub limit: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: Strategy::LmBaseline,
            dataset: PathBuf::from("data/esol.csv"),
            task: TaskKind::Regression,
            smiles_column: "smiles".into(),
            label_column: "auto".into(),
            split: (0.8, 0.1, 0.1),
            seeds: vec![0, 7, 42, 100, 2024],
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            fusion: FusionOp::Sum,
            alpha: 0.1,
            alpha_graph: 0.1,
            margin: 1.0,
            cross_graph: false,
            frozen_mpnn: false,
            gnn: GnnVariant::Mpnn,
            gnn_update: UpdateKind::Gru,
            message_steps: 3,
            hidden_dim: 64,
            num_layers: 3,
            num_heads: 4,
            ffn_dim: 256,
            max_len: crate::smiles::DEFAULT_MAX_LEN,
            mlm_pretrain: false,
            mlm_epochs: 5,
            mlm_rate: 0.15,
            limit: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn positive(key: &str, value: &str) -> Result<usize, ConfigError> {
    let n: usize = parse(key, value)?;
    if n == 0 {
        return Err(ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            reason: "must be positive".into(),
        });
    }
    Ok(n)
}

fn nonnegative(key: &str, value: &str) -> Result<f64, ConfigError> {
    let x: f64 = parse(key, value)?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            reason: "must be a finite number >= 0".into(),
        });
    }
    Ok(x)
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split([',', ':']).map(str::trim).filter(|s| !s.is_empty())
}

impl RunConfig {
    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let bad = |reason: &str| ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            reason: reason.into(),
        };
        match key {
            "strategy" => self.strategy = parse(key, v)?,
            "dataset" => self.dataset = PathBuf::from(v),
            "task" => self.task = parse(key, v)?,
            "smiles_column" => self.smiles_column = v.into(),
            "label_column" => self.label_column = v.into(),
            "split" => {
                let r: Vec<f64> = list(v).map(|x| parse(key, x)).collect::<Result<_, _>>()?;
                let [a, b, c] = r[..] else {
                    return Err(bad("expected three ratios, e.g. 0.8,0.1,0.1"));
                };
                // Accept "8:1:1" as well as fractions.
                let s = a + b + c;
                if !(a > 0.0 && b > 0.0 && c > 0.0) {
                    return Err(bad("ratios must be positive"));
                }
                self.split = (a / s, b / s, c / s);
            }
            "seeds" => {
                let s: Vec<u64> = list(v).map(|x| parse(key, x)).collect::<Result<_, _>>()?;
                if s.is_empty() {
                    return Err(bad("at least one seed is required"));
                }
                self.seeds = s;
            }
            "lr" => self.lr = nonnegative(key, v)?,
            "batch_size" => self.batch_size = positive(key, v)?,
            "max_epochs" => self.max_epochs = positive(key, v)?,
            "patience" => self.patience = positive(key, v)?,
            "fusion" => self.fusion = parse(key, v)?,
            "alpha" => self.alpha = nonnegative(key, v)?,
            "alpha_graph" => self.alpha_graph = nonnegative(key, v)?,
            "margin" => {
                self.margin = nonnegative(key, v)?;
                if self.margin == 0.0 {
                    return Err(bad("margin must be > 0"));
                }
            }
            "cross_graph" => self.cross_graph = parse(key, v)?,
            "frozen_mpnn" => self.frozen_mpnn = parse(key, v)?,
            "gnn" => self.gnn = parse(key, v)?,
            "gnn_update" => self.gnn_update = parse(key, v)?,
            "message_steps" => self.message_steps = positive(key, v)?,
            "hidden_dim" => self.hidden_dim = positive(key, v)?,
            "num_layers" => self.num_layers = positive(key, v)?,
            "num_heads" => self.num_heads = positive(key, v)?,
            "ffn_dim" => self.ffn_dim = positive(key, v)?,
            "max_len" => self.max_len = positive(key, v)?,
            "mlm_pretrain" => self.mlm_pretrain = parse(key, v)?,
            "mlm_epochs" => self.mlm_epochs = positive(key, v)?,
            "mlm_rate" => {
                self.mlm_rate = nonnegative(key, v)?;
                if self.mlm_rate > 1.0 {
                    return Err(bad("must be at most 1"));
                }
            }
            "limit" => self.limit = if v == "none" { None } else { Some(positive(key, v)?) },
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    /// Apply a flat `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.into(),
                });
            };
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.into(),
            reason: e.to_string(),
        })?;
        self.apply_text(&text)
    }

    /// The config as `key = value` lines, readable by [`apply_text`](Self::apply_text).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let (a, b, c) = self.split;
        let _ = writeln!(s, "strategy = {}", self.strategy);
        let _ = writeln!(s, "dataset = {}", self.dataset.display());
        let _ = writeln!(s, "task = {}", self.task);
        let _ = writeln!(s, "smiles_column = {}", self.smiles_column);
        let _ = writeln!(s, "label_column = {}", self.label_column);
        let _ = writeln!(s, "split = {a},{b},{c}");
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "fusion = {}", self.fusion);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "alpha_graph = {}", self.alpha_graph);
        let _ = writeln!(s, "margin = {}", self.margin);
        let _ = writeln!(s, "cross_graph = {}", self.cross_graph);
        let _ = writeln!(s, "frozen_mpnn = {}", self.frozen_mpnn);
        let _ = writeln!(s, "gnn = {}", self.gnn);
        let _ = writeln!(s, "gnn_update = {}", self.gnn_update);
        let _ = writeln!(s, "message_steps = {}", self.message_steps);
        let _ = writeln!(s, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(s, "num_layers = {}", self.num_layers);
        let _ = writeln!(s, "num_heads = {}", self.num_heads);
        let _ = writeln!(s, "ffn_dim = {}", self.ffn_dim);
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "mlm_pretrain = {}", self.mlm_pretrain);
        let _ = writeln!(s, "mlm_epochs = {}", self.mlm_epochs);
        let _ = writeln!(s, "mlm_rate = {}", self.mlm_rate);
        let _ = writeln!(
            s,
            "limit = {}",
            self.limit.map_or_else(|| "none".to_string(), |n| n.to_string())
        );
        s
    }

    /// Model configuration for a vocabulary of `vocab_size` tokens.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let mut m = ModelConfig::new(self.strategy, self.task, vocab_size);
        m.fusion = self.fusion;
        m.encoder.hidden_dim = self.hidden_dim;
        m.encoder.num_layers = self.num_layers;
        m.encoder.num_heads = self.num_heads;
        m.encoder.ffn_dim = self.ffn_dim;
        m.encoder.max_len = self.max_len;
        m.gnn.hidden_dim = self.hidden_dim;
        m.gnn.variant = self.gnn;
        m.gnn.update = self.gnn_update;
        m.gnn.message_steps = self.message_steps;
        m.contrast.alpha = self.alpha;
        m.contrast.alpha_graph = self.alpha_graph;
        m.contrast.margin = self.margin;
        m.contrast.cross_graph = self.cross_graph;
        m.contrast.frozen_mpnn = self.frozen_mpnn;
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("strategy = lm2mpnn\nfusion = gate # comment\nseeds = 3, 4\nsplit = 8:1:1\nlimit = 40\n")
            .unwrap();
        assert_eq!(c.strategy, Strategy::Lm2Mpnn);
        assert_eq!(c.seeds, vec![3, 4]);
        assert!((c.split.0 - 0.8).abs() < 1e-12);
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_keys_list_the_valid_ones() {
        let err = RunConfig::default().set("learning_rate", "0.1").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning_rate") && msg.contains("batch_size") && msg.contains("mlm_rate"));
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = RunConfig::default();
        assert!(c.set("batch_size", "0").is_err());
        assert!(c.set("seeds", "").is_err());
        assert!(c.set("alpha", "-1").is_err());
        assert!(c.set("split", "1,1").is_err());
        assert!(c.apply_text("no equals sign").is_err());
    }
}
