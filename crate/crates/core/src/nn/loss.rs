use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean absolute error over every entry.
    Mae,
    /// Categorical cross entropy summed over softmax blocks, averaged over rows.
    Cce,
}

fn check_shapes(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Structural(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `(1 / (N * K)) * sum |Y - Y_hat|`.
pub fn mae_loss(truth: &ArrayView2<f64>, pred: &ArrayView2<f64>) -> Result<f64> {
    check_shapes(truth, pred)?;
    if truth.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = truth.iter().zip(pred.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / truth.len() as f64)
}

/// `-(1 / N) * sum_i sum_j Y_ij ln(max(P_ij, 1e-12))`.
pub fn cce_loss(onehots: &ArrayView2<f64>, probs: &ArrayView2<f64>) -> Result<f64> {
    check_shapes(onehots, probs)?;
    if onehots.nrows() == 0 {
        return Ok(0.0);
    }
    let sum: f64 = onehots
        .iter()
        .zip(probs.iter())
        .filter(|(y, _)| **y != 0.0)
        .map(|(y, p)| y * p.max(LOG_CLAMP).ln())
        .sum();
    Ok(-sum / onehots.nrows() as f64)
}

/// Loss value and its gradient with respect to the output layer's
/// pre-activations. For CCE the output must come from a softmax layer, in
/// which case the gradient is `(P - Y) / N`.
pub fn output_delta(kind: LossKind, output: &Array2<f64>, targets: &ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    let out = output.view();
    match kind {
        LossKind::Mae => {
            let loss = mae_loss(targets, &out)?;
            let scale = 1.0 / output.len().max(1) as f64;
            let mut delta = output - targets;
            delta.mapv_inplace(|d| if d > 0.0 { scale } else if d < 0.0 { -scale } else { 0.0 });
            Ok((loss, delta))
        }
        LossKind::Cce => {
            let loss = cce_loss(targets, &out)?;
            let mut delta = output - targets;
            delta /= output.nrows().max(1) as f64;
            Ok((loss, delta))
        }
    }
}
