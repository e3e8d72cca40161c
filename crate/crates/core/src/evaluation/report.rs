//! Text and machine-readable evaluation reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{Averaging, Metrics};
use super::review::{Label, LabelDistribution};
use crate::pipeline::{ModelKind, RankingRun, RunMode};

/// Machine-readable evaluation record for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub model: ModelKind,
    pub mode: RunMode,
    pub k: usize,
    pub metrics: Metrics,
}

impl MetricsReport {
    pub fn new(run: &RankingRun, metrics: Metrics) -> Self {
        Self {
            run_id: run.run_id.clone(),
            model: run.model,
            mode: run.mode,
            k: run.k,
            metrics,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}

pub const METRIC_COLUMNS: [&str; 4] = ["Precision", "Recall", "F1", "Accuracy"];

fn table_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn separator(columns: usize) -> String {
    format!("|{}\n", "---|".repeat(columns))
}

/// Top-1 topic-match table: one row per run, columns Precision, Recall, F1,
/// Accuracy, values to two decimals. The header records the averaging used.
pub fn render_metrics_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let averaging: Vec<String> = {
        let mut seen: Vec<Averaging> = reports.iter().map(|r| r.metrics.averaging).collect();
        seen.dedup();
        seen.iter().map(ToString::to_string).collect()
    };
    let _ = writeln!(out, "# top-1 topic match, {} averaging", averaging.join("/"));
    let mut header = vec!["Model".to_string(), "Setup".to_string(), "Run".to_string()];
    header.extend(METRIC_COLUMNS.iter().map(|c| c.to_string()));
    out.push_str(&table_row(&header));
    out.push_str(&separator(header.len()));
    for r in reports {
        let m = &r.metrics;
        out.push_str(&table_row(&[
            r.model.to_string(),
            r.mode.to_string(),
            r.run_id.clone(),
            format!("{:.2}", m.macro_precision),
            format!("{:.2}", m.macro_recall),
            format!("{:.2}", m.macro_f1),
            format!("{:.2}", m.accuracy),
        ]));
    }
    out
}

/// Label distribution table: columns `1, 1a, 2, 3`, percentages to two decimals.
pub fn render_label_table(rows: &[(String, LabelDistribution)]) -> String {
    let mut out = String::new();
    let mut header = vec!["Model".to_string()];
    header.extend(Label::ALL.iter().map(|l| l.to_string()));
    header.push("n".into());
    out.push_str(&table_row(&header));
    out.push_str(&separator(header.len()));
    for (name, dist) in rows {
        let mut cells = vec![name.clone()];
        cells.extend(Label::ALL.iter().map(|l| format!("{:.2}%", dist.percent(*l))));
        cells.push(dist.total.to_string());
        out.push_str(&table_row(&cells));
    }
    out
}
