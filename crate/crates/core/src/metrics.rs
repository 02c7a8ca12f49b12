//! R², RMSE, and MAE over a prediction batch.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Aggregate regression metrics for one split.
///
/// `r2` is `None` when the targets have zero variance (the coefficient of
/// determination is undefined there); RMSE and MAE are always reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r2: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
    pub split: String,
}

impl MetricsReport {
    pub fn r2_text(&self) -> String {
        match self.r2 {
            Some(v) => format!("{v:.4}"),
            None => "NA".into(),
        }
    }
}

/// Compute metrics; order of samples does not matter.
pub fn compute_metrics(y_true: &[f64], y_pred: &[f64], split: &str) -> Result<MetricsReport> {
    if y_true.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape {
            op: "compute_metrics",
            lhs: vec![y_true.len()],
            rhs: vec![y_pred.len()],
        });
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    let mae = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p).abs())
        .sum::<f64>()
        / n;
    let rmse = (ss_res / n).sqrt();
    let r2 = if ss_tot == 0.0 {
        None
    } else {
        Some(1.0 - ss_res / ss_tot)
    };
    Ok(MetricsReport {
        r2,
        rmse,
        mae,
        n: y_true.len(),
        split: split.to_string(),
    })
}
