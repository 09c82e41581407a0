//! Training loops, evaluation, multi-seed reports, ablation sweeps, timing
//! profiles and checkpoints.

mod ablation;
mod checkpoint;
mod config;
mod profile;
mod report;
mod train;

use thiserror::Error;

pub use ablation::{ablate, cells, AblationKind, AblationRow, AblationTable, FOOTER, SPLIT_ROWS};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};
pub use config::{ConfigError, RunConfig, KEYS, KNOWN_LABEL_COLUMNS};
pub use profile::{attention_scaling, fitted_doubling_ratio, median, profile, scaling_table, ProfileReport, ProfileRow, ScalingRow, Verdict};
pub use report::{format_mean_std, mean_std, run_seeds, run_seeds_on, workers, RunReport, WORKERS_ENV};
pub use train::{
    detect_label_column, evaluate, improves, metric, predict_all, prepare, train_one, EpochStats, PreparedData,
    SeedReport, Trainer,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Smiles(#[from] crate::smiles::SmilesError),
    #[error(transparent)]
    Model(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("loss diverged (non-finite) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("cannot start workers: {0}")]
    Workers(String),
}
