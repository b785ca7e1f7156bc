use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{output_delta, LossKind};
use super::mlp::{backward_into, forward_trace, Mlp};
use super::optim::{Nadam, NadamConfig};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub optimizer: NadamConfig,
}

impl TrainConfig {
    /// Learning rate 0.001, batch 128, 500 epochs, MAE.
    pub fn regression() -> Self {
        Self { epochs: 500, batch_size: 128, seed: 0, loss: LossKind::Mae, optimizer: NadamConfig::default() }
    }

    /// Same optimizer and batch size as regression, 1000 epochs, CCE.
    pub fn classification() -> Self {
        Self { epochs: 1000, loss: LossKind::Cce, ..Self::regression() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn first_train_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.train_loss)
    }

    pub fn last_train_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.train_loss)
    }
}

/// Row indices of each mini-batch for one epoch: a full permutation drawn
/// from `(seed, epoch)`, cut into chunks, last partial batch kept.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, epoch as u64]));
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

pub(crate) fn check_pair(x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::Structural(format!(
            "{} feature rows but {} target rows",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    Ok(())
}

/// Mean loss of `model` over a data set, evaluated in chunks.
pub fn dataset_loss(model: &Mlp, x: ArrayView2<f64>, y: ArrayView2<f64>, loss: LossKind) -> Result<f64> {
    check_pair(&x, &y)?;
    let mut total = 0.0;
    for (xc, yc) in x.axis_chunks_iter(Axis(0), 4096).zip(y.axis_chunks_iter(Axis(0), 4096)) {
        let out = model.forward_batch(xc)?;
        let (l, _) = output_delta(loss, &out, &yc)?;
        total += l * xc.nrows() as f64;
    }
    Ok(total / x.nrows() as f64)
}

pub fn train(
    model: &mut Mlp,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    val: Option<(ArrayView2<f64>, ArrayView2<f64>)>,
    cfg: &TrainConfig,
) -> Result<History> {
    train_with_progress(model, x, y, val, cfg, |_| {})
}

/// Mini-batch training with Nadam; `progress` sees every epoch record.
/// The validation set is only scored, never used to steer training.
pub fn train_with_progress(
    model: &mut Mlp,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    val: Option<(ArrayView2<f64>, ArrayView2<f64>)>,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    check_pair(&x, &y)?;
    if y.ncols() != model.arch.n_outputs() {
        return Err(Error::Structural(format!(
            "targets have {} columns, network emits {}",
            y.ncols(),
            model.arch.n_outputs()
        )));
    }
    let mut opt = Nadam::new(cfg.optimizer, model.params.len());
    let mut grads = vec![0.0; model.params.len()];
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in epoch_batches(x.nrows(), cfg.batch_size, cfg.seed, epoch) {
            let xb = x.select(Axis(0), &batch);
            let yb: Array2<f64> = y.select(Axis(0), &batch);
            let trace = forward_trace(&model.arch, &model.params, xb.view())?;
            let (loss, delta) = output_delta(cfg.loss, trace.output(), &yb.view())?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, reason: format!("loss became {loss}") });
            }
            total += loss * batch.len() as f64;
            backward_into(&model.arch, &model.params, &trace, delta, &mut grads);
            opt.update(&mut model.params, &grads);
        }
        let train_loss = total / x.nrows() as f64;
        let val_loss = match val {
            Some((xv, yv)) => Some(dataset_loss(model, xv, yv, cfg.loss)?),
            None => None,
        };
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training { epoch, reason: "non-finite parameters".into() });
        }
        let rec = EpochRecord { epoch, train_loss, val_loss };
        progress(&rec);
        history.records.push(rec);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Architecture;
    use crate::nn::Activation;
    use rand::Rng;

    #[test]
    fn defaults() {
        let r = TrainConfig::regression();
        assert_eq!((r.optimizer.learning_rate, r.batch_size, r.epochs), (0.001, 128, 500));
        assert_eq!(TrainConfig::classification().epochs, 1000);
        assert_eq!(TrainConfig::classification().batch_size, 128);
    }

    #[test]
    fn batches_cover_every_row_once() {
        let b = epoch_batches(300, 128, 7, 3);
        assert_eq!(b.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![128, 128, 44]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..300).collect::<Vec<_>>());
        assert_ne!(epoch_batches(300, 128, 7, 4), b);
    }

    fn toy_problem(seed: u64, n: usize) -> (Array2<f64>, Array2<f64>) {
        let mut r = rng::stream(seed, &[]);
        let x: Array2<f64> = Array2::from_shape_fn((n, 20), |_| r.random_range(-1.0..1.0));
        let mut y = Array2::zeros((n, 3));
        for (i, row) in x.outer_iter().enumerate() {
            y[[i, 0]] = row[0] + 0.5 * row[3] * row[4];
            y[[i, 1]] = (row[1] * 2.0).sin();
            y[[i, 2]] = row[2].abs() - 0.5;
        }
        (x, y)
    }

    #[test]
    fn overfits_a_small_dataset() {
        let (x, y) = toy_problem(1, 100);
        let mut model = Mlp::init(Architecture::regression(20), &mut rng::stream(2, &[]));
        let cfg = TrainConfig { epochs: 200, ..TrainConfig::regression() };
        let h = train(&mut model, x.view(), y.view(), None, &cfg).unwrap();
        assert_eq!(h.records.len(), 200);
        assert!(h.last_train_loss().unwrap() <= 0.5 * h.first_train_loss().unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = toy_problem(3, 64);
        let run = || {
            let mut m = Mlp::init(
                Architecture::chain(&[20, 8, 3], &[Activation::Swish, Activation::Linear]).unwrap(),
                &mut rng::stream(4, &[]),
            );
            let cfg = TrainConfig { epochs: 5, batch_size: 16, seed: 9, ..TrainConfig::regression() };
            let h = train(&mut m, x.view(), y.view(), Some((x.view(), y.view())), &cfg).unwrap();
            (m.params, h)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha.records.iter().all(|r| r.val_loss.is_some()));
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let (x, mut y) = toy_problem(5, 32);
        y[[0, 0]] = f64::NAN;
        let mut m = Mlp::init(Architecture::regression(20), &mut rng::stream(6, &[]));
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::regression() };
        match train(&mut m, x.view(), y.view(), None, &cfg) {
            Err(Error::Training { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("expected training error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (x, y) = toy_problem(5, 8);
        let mut m = Mlp::init(Architecture::regression(20), &mut rng::stream(6, &[]));
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::regression() };
        assert!(matches!(train(&mut m, x.view(), y.view(), None, &bad), Err(Error::Config(_))));
    }
}
