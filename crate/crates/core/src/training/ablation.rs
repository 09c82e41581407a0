use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;

use super::config::RunConfig;
use super::report::{run_seeds_on, RunReport};
use super::train::PreparedData;
use super::TrainError;
use crate::gnn::GnnVariant;
use crate::integration::FusionOp;

pub const FOOTER: &str =
    "Desk-scale run: cells are mean ± sample std over the listed seeds; absolute values are not expected to match reference results.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    Splits,
    Fusion,
    Gnn,
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationKind::Splits => "splits",
            AblationKind::Fusion => "fusion",
            AblationKind::Gnn => "gnn",
        })
    }
}

impl FromStr for AblationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "splits" => Ok(AblationKind::Splits),
            "fusion" => Ok(AblationKind::Fusion),
            "gnn" => Ok(AblationKind::Gnn),
            other => Err(format!("unknown ablation '{other}' (expected splits, fusion or gnn)")),
        }
    }
}

/// Split ratios swept by the split ablation, with their row labels.
pub const SPLIT_ROWS: [(&str, (f64, f64, f64)); 4] = [
    ("9 : 0.5 : 0.5", (0.9, 0.05, 0.05)),
    ("8 : 1 : 1", (0.8, 0.1, 0.1)),
    ("7 : 2 : 1", (0.7, 0.2, 0.1)),
    ("6 : 2 : 2", (0.6, 0.2, 0.2)),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub cell: String,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub kind: String,
    pub title: String,
    pub row_header: String,
    pub column: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let w = self.rows.iter().map(|r| r.label.len()).chain([self.row_header.len()]).max().unwrap_or(0);
        let c = self.rows.iter().map(|r| r.cell.len()).chain([self.column.len()]).max().unwrap_or(0);
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.title);
        let _ = writeln!(s, "{:<w$}  {:>c$}", self.row_header, self.column);
        let _ = writeln!(s, "{}  {}", "-".repeat(w), "-".repeat(c));
        for r in &self.rows {
            let _ = writeln!(s, "{:<w$}  {:>c$}", r.label, r.cell);
        }
        let _ = writeln!(s, "{FOOTER}");
        s
    }

    pub fn json_lines(&self) -> String {
        self.rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "ablation": self.kind,
                    "row": r.label,
                    "cell": r.cell,
                    "mean": r.report.mean,
                    "std": r.report.std,
                    "successes": r.report.successes,
                    "seeds": r.report.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(),
                })
                .to_string()
                    + "\n"
            })
            .collect()
    }
}

/// Row labels and configs of one sweep.
pub fn cells(kind: AblationKind, base: &RunConfig) -> Vec<(String, RunConfig)> {
    match kind {
        AblationKind::Splits => SPLIT_ROWS
            .iter()
            .map(|(label, r)| (label.to_string(), RunConfig { split: *r, ..base.clone() }))
            .collect(),
        AblationKind::Fusion => FusionOp::ALL
            .iter()
            .map(|&op| (op.to_string(), RunConfig { fusion: op, ..base.clone() }))
            .collect(),
        AblationKind::Gnn => [(GnnVariant::Mpnn, "MPNN"), (GnnVariant::GraphConv, "GraphConv")]
            .iter()
            .map(|&(g, label)| (label.to_string(), RunConfig { gnn: g, ..base.clone() }))
            .collect(),
    }
}

/// Run the sweep with every seed of `base` per cell.
pub fn ablate(kind: AblationKind, base: &RunConfig, data: &PreparedData) -> Result<AblationTable, TrainError> {
    let mut rows = Vec::new();
    for (label, cfg) in cells(kind, base) {
        let (report, _) = run_seeds_on(&cfg, data)?;
        rows.push(AblationRow {
            label,
            cell: report.summary(),
            report,
        });
    }
    let dataset = base
        .dataset
        .file_stem()
        .map_or_else(|| base.dataset.display().to_string(), |s| s.to_string_lossy().into_owned());
    let (title, row_header) = match kind {
        AblationKind::Splits => (format!("Model: {} — split ratio ablation", base.strategy), "train : valid : test"),
        AblationKind::Fusion => (format!("Model: {} — fusion operator ablation", base.strategy), "fusion"),
        AblationKind::Gnn => (format!("Model: {} — graph network ablation", base.strategy), "graph network"),
    };
    Ok(AblationTable {
        kind: kind.to_string(),
        title,
        row_header: row_header.to_string(),
        column: format!("{dataset} ({})", base.task.metric_name()),
        rows,
    })
}
