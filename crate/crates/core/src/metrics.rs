//! Evaluation metrics: accuracy, per-class and macro F1, flow-restricted MAE
//! and R², and the error-vs-graph-size analysis.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// True flows below this threshold are excluded from MAE/R² reporting.
pub const FLOW_METRIC_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub per_class_f1: Option<Vec<f64>>,
    pub macro_f1: Option<f64>,
    pub mae_ge10: Option<f64>,
    pub r2_ge10: Option<f64>,
    /// One `(source road-node count, mean absolute error)` entry per graph.
    pub per_graph_error: Vec<(usize, f64)>,
}

impl MetricsReport {
    pub fn empty() -> MetricsReport {
        MetricsReport {
            accuracy: None,
            per_class_f1: None,
            macro_f1: None,
            mae_ge10: None,
            r2_ge10: None,
            per_graph_error: Vec::new(),
        }
    }
}

/// Accuracy plus per-class and macro F1 over predicted/true class indices.
/// Classes with no predictions and no occurrences contribute F1 = 0.
pub fn classification_metrics(
    predicted: &[usize],
    truth: &[usize],
    num_classes: usize,
) -> Result<(f64, Vec<f64>, f64)> {
    if predicted.len() != truth.len() {
        return Err(CoreError::Dimension("prediction/label length mismatch".into()));
    }
    if predicted.is_empty() {
        return Err(CoreError::Domain("cannot score an empty dataset".into()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut correct = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(CoreError::Domain("class index out of range".into()));
        }
        if p == t {
            correct += 1;
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let per_class: Vec<f64> = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    let macro_f1 = per_class.iter().sum::<f64>() / num_classes as f64;
    let accuracy = correct as f64 / predicted.len() as f64;
    Ok((accuracy, per_class, macro_f1))
}

/// MAE and R² restricted to entries whose TRUE value is at least 10 veh/h.
/// R² is clipped below at 0.00 for reporting.
pub fn regression_metrics(predictions: &[f64], targets: &[f64]) -> Result<(f64, f64)> {
    if predictions.len() != targets.len() {
        return Err(CoreError::Dimension("prediction/target length mismatch".into()));
    }
    let pairs: Vec<(f64, f64)> = predictions
        .iter()
        .zip(targets)
        .filter(|(_, &t)| t >= FLOW_METRIC_THRESHOLD)
        .map(|(&p, &t)| (p, t))
        .collect();
    if pairs.is_empty() {
        return Err(CoreError::Domain(format!(
            "no target reaches the {FLOW_METRIC_THRESHOLD} veh/h reporting threshold"
        )));
    }
    let n = pairs.len() as f64;
    let mae = pairs.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let mean_t = pairs.iter().map(|(_, t)| t).sum::<f64>() / n;
    let sse: f64 = pairs.iter().map(|(p, t)| (p - t) * (p - t)).sum();
    let sst: f64 = pairs.iter().map(|(_, t)| (t - mean_t) * (t - mean_t)).sum();
    let r2 = if sst == 0.0 {
        if sse == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - sse / sst).max(0.0)
    };
    Ok((mae, r2))
}

/// Least-squares slope and Pearson correlation of per-graph error vs size.
pub fn error_vs_graph_size(per_graph: &[(usize, f64)]) -> (f64, f64) {
    let n = per_graph.len() as f64;
    if per_graph.len() < 2 {
        return (0.0, 0.0);
    }
    let mean_x = per_graph.iter().map(|&(s, _)| s as f64).sum::<f64>() / n;
    let mean_y = per_graph.iter().map(|&(_, e)| e).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for &(s, e) in per_graph {
        let dx = s as f64 - mean_x;
        let dy = e - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let corr = if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx.sqrt() * syy.sqrt())
    };
    (slope, corr)
}
