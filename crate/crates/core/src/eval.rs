//! Metrics, trimmed means and result tables.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corrupt::CorruptionMode;
use crate::data::Task;
use crate::error::{QuailError, Result};
use crate::search::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    F1Macro,
    R2,
    Accuracy,
}

impl MetricKind {
    /// Validation/test metric for a task.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => MetricKind::F1Macro,
            Task::Regression => MetricKind::R2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub kind: MetricKind,
    pub value: f64,
}

/// Macro-averaged F1 over all `n_classes`; a class with no predictions and
/// no true members scores 0.
pub fn f1_macro(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(QuailError::invalid(format!(
            "f1 needs equal non-empty label vectors ({} vs {})",
            pred.len(),
            truth.len()
        )));
    }
    if n_classes == 0 || pred.iter().chain(truth).any(|&c| c >= n_classes) {
        return Err(QuailError::invalid("label outside the class range"));
    }
    let mut tp = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    let mut true_count = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        pred_count[p] += 1;
        true_count[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let total: f64 = (0..n_classes)
        .map(|c| {
            // 2PR/(P+R) = 2·tp / (pred + true)
            let denom = pred_count[c] + true_count[c];
            if tp[c] == 0 || denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / n_classes as f64)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(QuailError::invalid("accuracy needs equal non-empty label vectors"));
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

/// Coefficient of determination 1 − SS_res/SS_tot.
pub fn r2(pred: &[f64], y: &[f64]) -> Result<f64> {
    if y.len() < 2 || pred.len() != y.len() {
        return Err(QuailError::invalid(format!(
            "r2 needs at least two paired samples ({} vs {})",
            pred.len(),
            y.len()
        )));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(QuailError::invalid("r2 undefined for a constant target"));
    }
    let ss_res: f64 = pred.iter().zip(y).map(|(p, v)| (v - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean after dropping ⌊trim·n⌋ values from each end.
pub fn trimmed_mean(values: &[f64], trim_fraction: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(QuailError::invalid("trimmed mean of an empty slice"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = (trim_fraction * sorted.len() as f64).floor() as usize;
    let kept = &sorted[cut..sorted.len() - cut];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

pub const DEFAULT_TRIM: f64 = 0.10;

/// Difference in percentage points between two metrics already scaled ×100.
pub fn relative_improvement(quail_metric: f64, baseline_metric: f64) -> f64 {
    quail_metric - baseline_metric
}

/// Test metrics of one (dataset, mode, model) cell over the bootstrap splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub mode: CorruptionMode,
    pub model: ModelKind,
    pub split_metrics: Vec<f64>,
    pub mean: f64,
}

impl CellResult {
    pub fn new(dataset: impl Into<String>, mode: CorruptionMode, model: ModelKind, split_metrics: Vec<f64>) -> Self {
        let mean = mean(&split_metrics);
        CellResult {
            dataset: dataset.into(),
            mode,
            model,
            split_metrics,
            mean,
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Formats a [0, 1]-scale metric as a ×100 value with two decimals.
pub fn pct(value: f64) -> String {
    format!("{:.2}", 100.0 * value)
}

/// Writes one row per (dataset, mode, model, split).
pub fn write_results_csv<W: Write>(cells: &[CellResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dataset", "mode", "model", "split", "test_metric"])?;
    for c in cells {
        for (s, m) in c.split_metrics.iter().enumerate() {
            w.write_record([
                c.dataset.as_str(),
                c.mode.as_str(),
                c.model.as_str(),
                &s.to_string(),
                &pct(*m),
            ])?;
        }
    }
    w.flush().map_err(|e| QuailError::io("<results writer>", e))?;
    Ok(())
}

/// Writes a dataset × (mode, model) grid of mean test metrics (×100), with
/// per-mode QuAIL-vs-MLP improvement columns when both models are present.
pub fn write_summary_csv<W: Write>(cells: &[CellResult], writer: W) -> Result<()> {
    let mut columns: Vec<(CorruptionMode, ModelKind)> = cells.iter().map(|c| (c.mode, c.model)).collect();
    columns.sort_by_key(|&(m, k)| (mode_rank(m), k.rank()));
    columns.dedup();
    let mut by_dataset: BTreeMap<&str, BTreeMap<(CorruptionMode, ModelKind), f64>> = BTreeMap::new();
    for c in cells {
        by_dataset.entry(&c.dataset).or_default().insert((c.mode, c.model), c.mean);
    }
    let improvement_modes: Vec<CorruptionMode> = CorruptionMode::ALL
        .into_iter()
        .filter(|&m| columns.contains(&(m, ModelKind::Quail)) && columns.contains(&(m, ModelKind::Mlp)))
        .collect();

    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["dataset".to_owned()];
    header.extend(columns.iter().map(|(m, k)| format!("{m}_{}", k.as_str())));
    header.extend(improvement_modes.iter().map(|m| format!("{m}_improvement")));
    w.write_record(&header)?;
    for (dataset, row) in &by_dataset {
        let mut rec = vec![dataset.to_string()];
        rec.extend(columns.iter().map(|key| row.get(key).map(|&v| pct(v)).unwrap_or_default()));
        for &m in &improvement_modes {
            rec.push(match (row.get(&(m, ModelKind::Quail)), row.get(&(m, ModelKind::Mlp))) {
                (Some(&q), Some(&b)) => format!("{:+.2}", relative_improvement(100.0 * q, 100.0 * b)),
                _ => String::new(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| QuailError::io("<summary writer>", e))?;
    Ok(())
}

pub(crate) fn mode_rank(m: CorruptionMode) -> usize {
    match m {
        CorruptionMode::Clean => 0,
        CorruptionMode::Ccar => 1,
        CorruptionMode::Cnar => 2,
    }
}
