use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// Euclidean distance between predicted and true release location, m.
    pub location: f64,
    /// Absolute mass error, g; absent for location-only models.
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_rows: usize,
    pub mean_location_error: f64,
    pub mass_mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_row: Option<Vec<RowError>>,
}

/// Scores predictions (`N x 2` location-only or `N x 3` with mass) against
/// `N x 3` truth in physical units.
pub fn evaluate_predictions(pred: ArrayView2<f64>, truth: ArrayView2<f64>, keep_rows: bool) -> Result<Metrics> {
    if pred.nrows() != truth.nrows() || truth.ncols() < 3 || !(pred.ncols() == 2 || pred.ncols() == 3) {
        return Err(Error::Structural(format!(
            "cannot score {:?} predictions against {:?} truth",
            pred.shape(),
            truth.shape()
        )));
    }
    if pred.nrows() == 0 {
        return Err(Error::Config("no rows to evaluate".into()));
    }
    let with_mass = pred.ncols() == 3;
    let rows: Vec<RowError> = pred
        .outer_iter()
        .zip(truth.outer_iter())
        .map(|(p, t)| RowError {
            location: ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt(),
            mass: with_mass.then(|| (p[2] - t[2]).abs()),
        })
        .collect();
    let n = rows.len() as f64;
    let mean_location_error = rows.iter().map(|r| r.location).sum::<f64>() / n;
    let mass_mae = with_mass.then(|| rows.iter().filter_map(|r| r.mass).sum::<f64>() / n);
    Ok(Metrics {
        n_rows: rows.len(),
        mean_location_error,
        mass_mae,
        per_row: keep_rows.then_some(rows),
    })
}
