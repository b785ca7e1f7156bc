//! Regression and binned-classification inverse models.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::bins::{binned_expectation, BinGrid};
use super::eval::{evaluate_predictions, Metrics};
use super::mlp::{Architecture, Mlp};
use super::train::{train_with_progress, EpochRecord, History, TrainConfig};
use super::LossKind;
use crate::datagen::{fit_normalizer, ColumnScaler, Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

fn normalized_features(d: &Dataset, scaler: &ColumnScaler) -> Array2<f64> {
    let mut x = d.features();
    scaler.apply(&mut x);
    x
}

/// Point estimate of `(x_c, y_c, m_c)`, trained with MAE on z-scored targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub mlp: Mlp,
    pub normalizer: Normalizer,
    pub train_config: TrainConfig,
}

impl RegressionModel {
    pub fn fit(train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<(Self, History)> {
        Self::fit_with_progress(train, val, cfg, |_| {})
    }

    pub fn fit_with_progress(
        train: &Dataset,
        val: Option<&Dataset>,
        cfg: &TrainConfig,
        progress: impl FnMut(&EpochRecord),
    ) -> Result<(Self, History)> {
        if cfg.loss != LossKind::Mae {
            return Err(Error::Config("regression networks train with MAE".into()));
        }
        let normalizer = fit_normalizer(train)?;
        let x = normalized_features(train, &normalizer.features);
        let mut y = train.targets();
        normalizer.targets.apply(&mut y);
        let val_xy = val.map(|v| {
            let mut vy = v.targets();
            normalizer.targets.apply(&mut vy);
            (normalized_features(v, &normalizer.features), vy)
        });
        let arch = Architecture::regression(train.n_features());
        let mut mlp = Mlp::init(arch, &mut rng::stream(cfg.seed, &[tag::INIT]));
        let history = train_with_progress(
            &mut mlp,
            x.view(),
            y.view(),
            val_xy.as_ref().map(|(a, b)| (a.view(), b.view())),
            cfg,
            progress,
        )?;
        Ok((Self { mlp, normalizer, train_config: *cfg }, history))
    }

    /// Predictions in meters and grams for raw (unnormalized) feature rows.
    pub fn predict(&self, raw_features: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut x = raw_features.to_owned();
        self.normalizer.features.apply(&mut x);
        let mut out = self.mlp.forward_batch(x.view())?;
        self.normalizer.targets.invert(&mut out);
        Ok(out)
    }

    pub fn predict_one(&self, raw_features: &[f64]) -> Result<[f64; 3]> {
        let x = ArrayView2::from_shape((1, raw_features.len()), raw_features)
            .map_err(|e| Error::Structural(e.to_string()))?;
        let out = self.predict(x)?;
        Ok([out[[0, 0]], out[[0, 1]], out[[0, 2]]])
    }

    pub fn evaluate(&self, d: &Dataset, keep_rows: bool) -> Result<Metrics> {
        let pred = self.predict(d.features().view())?;
        evaluate_predictions(pred.view(), d.targets().view(), keep_rows)
    }
}

/// Location classifier with one softmax block per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationModel {
    pub mlp: Mlp,
    pub features: ColumnScaler,
    pub x_bins: BinGrid,
    pub y_bins: BinGrid,
    pub train_config: TrainConfig,
}

/// Concatenated one-hot encodings of the x and y release bins.
pub fn onehot_targets(d: &Dataset, x_bins: &BinGrid, y_bins: &BinGrid) -> Array2<f64> {
    let mut y = Array2::zeros((d.len(), x_bins.n + y_bins.n));
    for (i, s) in d.rows.iter().enumerate() {
        y[[i, x_bins.index_of(s.x_c)]] = 1.0;
        y[[i, x_bins.n + y_bins.index_of(s.y_c)]] = 1.0;
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinnedLocation {
    pub x: f64,
    pub y: f64,
}

impl ClassificationModel {
    pub fn fit(train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<(Self, History)> {
        Self::fit_with_progress(train, val, cfg, |_| {})
    }

    pub fn fit_with_progress(
        train: &Dataset,
        val: Option<&Dataset>,
        cfg: &TrainConfig,
        progress: impl FnMut(&EpochRecord),
    ) -> Result<(Self, History)> {
        if cfg.loss != LossKind::Cce {
            return Err(Error::Config("classification networks train with CCE".into()));
        }
        let (x_bins, y_bins) = (BinGrid::release_x(), BinGrid::release_y());
        if x_bins.n != y_bins.n {
            return Err(Error::Config("both coordinates must use the same bin count".into()));
        }
        let features = fit_normalizer(train)?.features;
        let x = normalized_features(train, &features);
        let y = onehot_targets(train, &x_bins, &y_bins);
        let val_xy = val.map(|v| (normalized_features(v, &features), onehot_targets(v, &x_bins, &y_bins)));
        let arch = Architecture::classification(train.n_features(), x_bins.n);
        let mut mlp = Mlp::init(arch, &mut rng::stream(cfg.seed, &[tag::INIT]));
        let history = train_with_progress(
            &mut mlp,
            x.view(),
            y.view(),
            val_xy.as_ref().map(|(a, b)| (a.view(), b.view())),
            cfg,
            progress,
        )?;
        Ok((Self { mlp, features, x_bins, y_bins, train_config: *cfg }, history))
    }

    /// `N x (2 * bins)` probabilities: x block then y block.
    pub fn probabilities(&self, raw_features: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut x = raw_features.to_owned();
        self.features.apply(&mut x);
        self.mlp.forward_batch(x.view())
    }

    /// Binned expectations, `N x 2`.
    pub fn predict(&self, raw_features: ArrayView2<f64>) -> Result<Array2<f64>> {
        let probs = self.probabilities(raw_features)?;
        let n = self.x_bins.n;
        let mut out = Array2::zeros((probs.nrows(), 2));
        for (i, row) in probs.outer_iter().enumerate() {
            let row = row.as_slice().expect("standard layout");
            out[[i, 0]] = binned_expectation(&row[..n], &self.x_bins);
            out[[i, 1]] = binned_expectation(&row[n..], &self.y_bins);
        }
        Ok(out)
    }

    pub fn evaluate(&self, d: &Dataset, keep_rows: bool) -> Result<Metrics> {
        let pred = self.predict(d.features().view())?;
        evaluate_predictions(pred.view(), d.targets().view(), keep_rows)
    }
}
