use serde::{Deserialize, Serialize};

use geomsign_autodiff::{Real, Tensor};

use crate::error::{HarnessError, Result};

/// Whether `label` ranks among the `k` highest entries of `row`, breaking
/// ties in favour of the lower class index.
pub fn in_top_k<F: Real>(row: &[F], label: usize, k: usize) -> bool {
    let target = row[label];
    let ahead = row
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < label))
        .count();
    ahead < k
}

/// Fraction of rows of `logits` (`[N, C]`) whose label is in the top `k`.
pub fn topk_accuracy<F: Real>(logits: &Tensor<F>, labels: &[usize], k: usize) -> Result<f64> {
    let c = logits.last_dim();
    let n = if logits.shape().is_empty() {
        0
    } else {
        logits.len() / c.max(1)
    };
    if k == 0 || k > c {
        return Err(HarnessError::InvalidArgument(format!(
            "k = {k} outside [1, {c}]"
        )));
    }
    if n != labels.len() {
        return Err(HarnessError::InvalidArgument(format!(
            "{n} logit rows for {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(HarnessError::InvalidArgument(format!(
            "label {bad} outside {c} classes"
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let hits = logits
        .data()
        .chunks_exact(c)
        .zip(labels)
        .filter(|(row, &l)| in_top_k(row, l, k))
        .count();
    Ok(hits as f64 / n as f64)
}

/// Mean and population standard deviation; `(NaN, NaN)` for no values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One row of a metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub train_views: String,
    pub signers: String,
    pub test_view: String,
    pub variant: String,
    pub top1_mean: f64,
    pub top1_std: f64,
    pub top3_mean: f64,
    pub top3_std: f64,
    pub n_folds: usize,
}
