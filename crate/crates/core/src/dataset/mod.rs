//! CSV ingestion, seeded splits, mini-batching and naive baselines.
//!
//! Splits and batch orders use [`SplitMix64`](crate::rng::SplitMix64) and its
//! Fisher-Yates shuffle, so they are reproducible in any language.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::rng::SplitMix64;
use crate::smiles::{parse, tokenize, Vocabulary, DEFAULT_MAX_LEN};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("column '{column}' not found; available columns: {}", available.join(", "))]
    MissingColumn { column: String, available: Vec<String> },
    #[error("{0} contains no data rows")]
    Empty(PathBuf),
    #[error("invalid split ratios {0:?}: each must be > 0 and they must sum to 1")]
    BadRatios((f64, f64, f64)),
    #[error("split leaves the {0} partition empty")]
    EmptyPartition(&'static str),
    #[error("{0} is empty")]
    EmptySubset(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Regression,
    BinaryClassification,
}

impl TaskKind {
    pub fn metric_name(self) -> &'static str {
        match self {
            TaskKind::Regression => "mae",
            TaskKind::BinaryClassification => "accuracy",
        }
    }

    /// Whether a larger metric value is better.
    pub fn higher_is_better(self) -> bool {
        matches!(self, TaskKind::BinaryClassification)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Regression => "regression",
            TaskKind::BinaryClassification => "classification",
        })
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "regression" => Ok(TaskKind::Regression),
            "classification" | "binary-classification" => Ok(TaskKind::BinaryClassification),
            other => Err(format!("unknown task '{other}' (expected regression or classification)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataRecord {
    pub smiles: String,
    pub label: f64,
    /// Zero-based data-row position in the source file.
    pub row_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuarantineEntry {
    pub row_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub records: Vec<DataRecord>,
    pub quarantine: Vec<QuarantineEntry>,
    pub total_rows: usize,
    /// Rows that carried stereo markers (accepted, markers ignored).
    pub stereo_rows: usize,
}

impl LoadedDataset {
    /// One line per quarantined row: `row<TAB>reason`.
    pub fn quarantine_report(&self) -> String {
        self.quarantine
            .iter()
            .map(|q| format!("{}\t{}\n", q.row_index, q.reason))
            .collect()
    }
}

pub fn load_csv(
    path: impl AsRef<Path>,
    smiles_column: &str,
    label_column: &str,
    task: TaskKind,
) -> Result<LoadedDataset, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn {
                column: name.to_string(),
                available: headers.clone(),
            })
    };
    let (si, li) = (find(smiles_column)?, find(label_column)?);

    let vocab = Vocabulary::default();
    let mut out = LoadedDataset {
        records: Vec::new(),
        quarantine: Vec::new(),
        total_rows: 0,
        stereo_rows: 0,
    };
    for (row_index, row) in reader.records().enumerate() {
        out.total_rows += 1;
        let mut reject = |reason: String| out.quarantine.push(QuarantineEntry { row_index, reason });
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                reject(format!("unreadable row: {e}"));
                continue;
            }
        };
        let (Some(smiles), Some(raw_label)) = (row.get(si), row.get(li)) else {
            reject("missing field".to_string());
            continue;
        };
        let smiles = smiles.trim();
        let label = match raw_label.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                reject(format!("missing or non-numeric label '{raw_label}'"));
                continue;
            }
        };
        if task == TaskKind::BinaryClassification && label != 0.0 && label != 1.0 {
            reject(format!("label {label} is not 0 or 1"));
            continue;
        }
        match parse(smiles).and_then(|g| tokenize(smiles, &vocab).map(|t| (g, t))) {
            Err(e) => reject(format!("unparseable SMILES '{smiles}': {e}")),
            Ok((g, t)) if t.atom_token_positions.len() != g.num_atoms() => {
                reject(format!("alignment mismatch for '{smiles}'"))
            }
            Ok((_, t)) if t.len() > DEFAULT_MAX_LEN => reject(format!(
                "sequence of {} tokens exceeds maximum length {DEFAULT_MAX_LEN}",
                t.len()
            )),
            Ok(_) => {
                if smiles.contains(['/', '\\', '@']) {
                    out.stereo_rows += 1;
                }
                out.records.push(DataRecord {
                    smiles: smiles.to_string(),
                    label,
                    row_index,
                });
            }
        }
    }
    if out.total_rows == 0 {
        return Err(DatasetError::Empty(path.to_path_buf()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, valid: f64, test: f64, seed: u64) -> Self {
        SplitSpec {
            ratios: (train, valid, test),
            seed,
        }
    }

    /// Partition sizes for `n` records. A tiny epsilon absorbs representation
    /// error in products that should be integral.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize), DatasetError> {
        let (a, b, c) = self.ratios;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-6 {
            return Err(DatasetError::BadRatios(self.ratios));
        }
        let n_train = ((a * n as f64) + 1e-9).floor() as usize;
        let n_valid = ((b * n as f64) + 1e-9).floor() as usize;
        let sizes = (n_train, n_valid, n - n_train - n_valid);
        if sizes.0 == 0 {
            return Err(DatasetError::EmptyPartition("train"));
        }
        if sizes.1 == 0 {
            return Err(DatasetError::EmptyPartition("valid"));
        }
        if sizes.2 == 0 {
            return Err(DatasetError::EmptyPartition("test"));
        }
        Ok(sizes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffle with `SplitMix64::new(seed)`, then take `floor(r_train N)` train
/// records, `floor(r_valid N)` valid records, and the remainder as test.
pub fn split<T: Clone>(records: &[T], spec: &SplitSpec) -> Result<Split<T>, DatasetError> {
    let (n_train, n_valid, _) = spec.sizes(records.len())?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    SplitMix64::new(spec.seed).shuffle(&mut order);
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect();
    Ok(Split {
        train: pick(&order[..n_train]),
        valid: pick(&order[n_train..n_train + n_valid]),
        test: pick(&order[n_train + n_valid..]),
    })
}

/// Index batches over a subset of length `len`, shuffled by `epoch_seed`;
/// the final partial batch is kept.
pub fn batch_iter(len: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..len).collect();
    SplitMix64::new(epoch_seed).shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Regression: MAE of predicting the training mean. Classification: accuracy
/// of predicting the training majority class (ties go to class 1).
pub fn naive_baseline(train: &[f64], test: &[f64], task: TaskKind) -> Result<f64, DatasetError> {
    if train.is_empty() {
        return Err(DatasetError::EmptySubset("train"));
    }
    if test.is_empty() {
        return Err(DatasetError::EmptySubset("test"));
    }
    let n = test.len() as f64;
    Ok(match task {
        TaskKind::Regression => {
            let mean = train.iter().sum::<f64>() / train.len() as f64;
            test.iter().map(|y| (y - mean).abs()).sum::<f64>() / n
        }
        TaskKind::BinaryClassification => {
            let ones = train.iter().filter(|&&y| y == 1.0).count();
            let majority = if 2 * ones >= train.len() { 1.0 } else { 0.0 };
            test.iter().filter(|&&y| y == majority).count() as f64 / n
        }
    })
}
