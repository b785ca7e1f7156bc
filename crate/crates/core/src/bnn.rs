//! Mean-field Gaussian variational MLP trained by maximizing the ELBO with
//! reparameterized gradients.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{counts_to_features, fit_normalizer, Dataset, Normalizer, SimulationSetup};
use crate::error::{Error, Result};
use crate::nn::mlp::{backward_into, forward_trace};
use crate::nn::train::{check_pair, epoch_batches, EpochRecord, History};
use crate::nn::{evaluate_predictions, Architecture, Metrics, Mlp, Nadam, NadamConfig};
use crate::rng::{self, tag};
use crate::sensing::{expected_array, sample_counts};
use crate::transport::Scenario;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Initial posterior standard deviation of every weight.
pub const INITIAL_SIGMA: f64 = 0.05;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Observation model for the ELBO data term on z-scored targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Fixed unit variance.
    #[default]
    Unit,
    /// One learned log-variance per output.
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalMlp {
    pub arch: Architecture,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    /// Per-output log noise variance; all zero under [`NoiseModel::Unit`].
    pub log_noise_var: Vec<f64>,
    pub noise: NoiseModel,
    pub normalizer: Normalizer,
}

/// One weight draw and the standard-normal noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub mlp: Mlp,
    pub eps: Vec<f64>,
}

/// Closed-form KL divergence of `N(mu, sigma^2)` factors from `N(0, 1)`.
pub fn kl_to_prior(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum()
}

impl VariationalMlp {
    pub fn init<R: Rng + ?Sized>(arch: Architecture, normalizer: Normalizer, noise: NoiseModel, rng: &mut R) -> Self {
        let mu = arch.init_params(rng);
        let rho = vec![softplus_inverse(INITIAL_SIGMA); mu.len()];
        let log_noise_var = vec![0.0; arch.n_outputs()];
        Self { arch, mu, rho, log_noise_var, noise, normalizer }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let n = self.arch.n_params();
        if self.mu.len() != n || self.rho.len() != n || self.log_noise_var.len() != self.arch.n_outputs() {
            return Err(Error::Structural("variational parameter lengths do not match the architecture".into()));
        }
        if self.arch.n_inputs() != self.normalizer.features.mean.len()
            || self.arch.n_outputs() != self.normalizer.targets.mean.len()
        {
            return Err(Error::Structural("normalizer does not match the architecture".into()));
        }
        Ok(())
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    pub fn kl(&self) -> f64 {
        kl_to_prior(&self.mu, &self.sigma())
    }

    /// Network at the posterior means.
    pub fn mean_network(&self) -> Mlp {
        Mlp { arch: self.arch.clone(), params: self.mu.clone() }
    }

    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Realization {
        let eps: Vec<f64> = (0..self.mu.len()).map(|_| rng.sample(StandardNormal)).collect();
        let params = self.realize(&eps);
        Realization { mlp: Mlp { arch: self.arch.clone(), params }, eps }
    }

    fn realize(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.rho)
            .zip(eps)
            .map(|((&m, &r), &e)| m + softplus(r) * e)
            .collect()
    }

    fn realize_into<R: Rng + ?Sized>(&self, sigma: &[f64], rng: &mut R, w: &mut [f64]) {
        for ((w, &m), &s) in w.iter_mut().zip(&self.mu).zip(sigma) {
            let e: f64 = rng.sample(StandardNormal);
            *w = m + s * e;
        }
    }

    /// Trainable parameters packed as `[mu, rho, log_noise_var]`.
    pub fn packed(&self) -> Vec<f64> {
        [self.mu.as_slice(), &self.rho, &self.log_noise_var].concat()
    }

    pub fn unpack(&mut self, p: &[f64]) {
        let n = self.mu.len();
        self.mu.copy_from_slice(&p[..n]);
        self.rho.copy_from_slice(&p[n..2 * n]);
        self.log_noise_var.copy_from_slice(&p[2 * n..]);
    }

    fn normalize_row(&self, raw: &[f64]) -> Result<Array2<f64>> {
        if raw.len() != self.arch.n_inputs() {
            return Err(Error::Structural(format!(
                "expected {} features, got {}",
                self.arch.n_inputs(),
                raw.len()
            )));
        }
        let mut row = raw.to_vec();
        self.normalizer.features.apply_row(&mut row);
        Ok(Array2::from_shape_vec((1, row.len()), row).expect("row shape"))
    }

    fn forward_physical(&self, x: &Array2<f64>, weights: &[f64]) -> Result<[f64; 3]> {
        let trace = forward_trace(&self.arch, weights, x.view())?;
        let mut out = trace.output().row(0).to_vec();
        self.normalizer.targets.invert_row(&mut out);
        Ok([out[0], out[1], out[2]])
    }

    /// One prediction through one freshly sampled weight realization, in
    /// meters and grams.
    pub fn predict_stochastic<R: Rng + ?Sized>(&self, raw_features: &[f64], rng: &mut R) -> Result<[f64; 3]> {
        self.predictor().predict(raw_features, rng)
    }

    /// Caches `sigma` for repeated stochastic predictions.
    pub fn predictor(&self) -> Predictor<'_> {
        Predictor { model: self, sigma: self.sigma() }
    }

    /// Prediction at the posterior means.
    pub fn predict_mean(&self, raw_features: &[f64]) -> Result<[f64; 3]> {
        let x = self.normalize_row(raw_features)?;
        self.forward_physical(&x, &self.mu)
    }
}

pub struct Predictor<'a> {
    model: &'a VariationalMlp,
    sigma: Vec<f64>,
}

impl Predictor<'_> {
    pub fn predict<R: Rng + ?Sized>(&self, raw_features: &[f64], rng: &mut R) -> Result<[f64; 3]> {
        let x = self.model.normalize_row(raw_features)?;
        let mut w = vec![0.0; self.sigma.len()];
        self.model.realize_into(&self.sigma, rng, &mut w);
        self.model.forward_physical(&x, &w)
    }
}

/// Negative ELBO on one batch and its gradient with respect to the packed
/// parameters, for a given standard-normal draw `eps`. The data term is the
/// batch-summed Gaussian NLL, the prior term is `kl_weight * KL`.
pub fn elbo_with_eps(
    m: &VariationalMlp,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    eps: &[f64],
    kl_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    check_pair(&x, &y)?;
    let n = m.mu.len();
    let w = m.realize(eps);
    let trace = forward_trace(&m.arch, &w, x)?;
    let out = trace.output();
    if y.ncols() != out.ncols() {
        return Err(Error::Structural(format!("targets have {} columns, network emits {}", y.ncols(), out.ncols())));
    }
    let inv_var: Vec<f64> = m.log_noise_var.iter().map(|lv| (-lv).exp()).collect();
    let mut nll = 0.0;
    let mut g_lv = vec![0.0; out.ncols()];
    let mut delta = Array2::zeros(out.raw_dim());
    for ((i, j), d) in delta.indexed_iter_mut() {
        let r = out[[i, j]] - y[[i, j]];
        nll += 0.5 * (r * r * inv_var[j] + m.log_noise_var[j]) + HALF_LN_2PI;
        *d = r * inv_var[j];
        g_lv[j] += 0.5 * (1.0 - r * r * inv_var[j]);
    }
    let mut g_w = vec![0.0; n];
    backward_into(&m.arch, &w, &trace, delta, &mut g_w);

    let mut grads = vec![0.0; 2 * n + g_lv.len()];
    let mut kl = 0.0;
    for i in 0..n {
        let (mu, rho) = (m.mu[i], m.rho[i]);
        let s = softplus(rho);
        kl += 0.5 * (mu * mu + s * s - 1.0 - (s * s).ln());
        grads[i] = g_w[i] + kl_weight * mu;
        grads[n + i] = (g_w[i] * eps[i] + kl_weight * (s - 1.0 / s)) * sigmoid(rho);
    }
    if m.noise == NoiseModel::Learned {
        grads[2 * n..].copy_from_slice(&g_lv);
    }
    Ok((nll + kl_weight * kl, grads))
}

/// Single-sample negative ELBO estimate for one batch drawn from `rng`,
/// with the KL term weighted by `batch / n_total`.
pub fn elbo_loss<R: Rng + ?Sized>(
    m: &VariationalMlp,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    rng: &mut R,
    n_total: usize,
) -> Result<f64> {
    let eps: Vec<f64> = (0..m.mu.len()).map(|_| rng.sample(StandardNormal)).collect();
    let kl_weight = x.nrows() as f64 / n_total as f64;
    Ok(elbo_with_eps(m, x, y, &eps, kl_weight)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnnConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: NadamConfig,
    pub noise: NoiseModel,
    /// Multiplier on the per-batch KL weight; 1 is the plain ELBO.
    pub kl_scale: f64,
}

impl Default for BnnConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 128,
            seed: 0,
            optimizer: NadamConfig::default(),
            noise: NoiseModel::Unit,
            kl_scale: 1.0,
        }
    }
}

impl BnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.kl_scale >= 0.0 && self.kl_scale.is_finite()) {
            return Err(Error::Config(format!("kl_scale must be finite and non-negative, got {}", self.kl_scale)));
        }
        Ok(())
    }
}

/// Mean per-row Gaussian NLL at the posterior means.
pub fn mean_nll(m: &VariationalMlp, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    check_pair(&x, &y)?;
    let out = m.mean_network().forward_batch(x)?;
    let mut nll = 0.0;
    for ((i, j), &o) in out.indexed_iter() {
        let lv = m.log_noise_var[j];
        nll += 0.5 * ((o - y[[i, j]]).powi(2) * (-lv).exp() + lv) + HALF_LN_2PI;
    }
    Ok(nll / x.nrows() as f64)
}

pub fn train_bnn(train: &Dataset, val: Option<&Dataset>, cfg: &BnnConfig) -> Result<(VariationalMlp, History)> {
    train_bnn_with_progress(train, val, cfg, |_| {})
}

/// Nadam on `(mu, rho[, log_noise_var])` with one weight sample per batch.
/// The recorded train loss is the negative ELBO per row; the validation
/// loss is the per-row NLL at the posterior means.
pub fn train_bnn_with_progress(
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &BnnConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(VariationalMlp, History)> {
    cfg.validate()?;
    let normalizer = fit_normalizer(train)?;
    let prepare = |d: &Dataset| {
        let mut x = d.features();
        normalizer.features.apply(&mut x);
        let mut y = d.targets();
        normalizer.targets.apply(&mut y);
        (x, y)
    };
    let (x, y) = prepare(train);
    let val_xy = val.map(prepare);
    let arch = Architecture::regression(train.n_features());
    let mut model = VariationalMlp::init(arch, normalizer.clone(), cfg.noise, &mut rng::stream(cfg.seed, &[tag::INIT]));
    let n_total = x.nrows();
    let mut params = model.packed();
    let mut opt = Nadam::new(cfg.optimizer, params.len());
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for (bi, batch) in epoch_batches(n_total, cfg.batch_size, cfg.seed, epoch).into_iter().enumerate() {
            let xb = x.select(Axis(0), &batch);
            let yb = y.select(Axis(0), &batch);
            let mut r = rng::stream(cfg.seed, &[tag::WEIGHTS, epoch as u64, bi as u64]);
            let eps: Vec<f64> = (0..model.mu.len()).map(|_| r.sample(StandardNormal)).collect();
            let kl_weight = cfg.kl_scale * batch.len() as f64 / n_total as f64;
            let (loss, grads) = elbo_with_eps(&model, xb.view(), yb.view(), &eps, kl_weight)?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, reason: format!("negative ELBO became {loss}") });
            }
            total += loss;
            opt.update(&mut params, &grads);
            model.unpack(&params);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training { epoch, reason: "non-finite variational parameters".into() });
        }
        let val_loss = match &val_xy {
            Some((xv, yv)) => Some(mean_nll(&model, xv.view(), yv.view())?),
            None => None,
        };
        let rec = EpochRecord { epoch, train_loss: total / n_total as f64, val_loss };
        progress(&rec);
        history.records.push(rec);
    }
    Ok((model, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityKind {
    Epistemic,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSampleSet {
    pub samples: Vec<[f64; 3]>,
    pub kind: DensityKind,
    pub seed: u64,
}

impl PosteriorSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[j]).collect()
    }
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        Err(Error::Config("number of samples must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// `m` stochastic predictions for the same feature vector. Sample `i` uses
/// the weight stream `(seed, WEIGHTS, i)`.
pub fn epistemic_density(model: &VariationalMlp, raw_features: &[f64], m: usize, seed: u64) -> Result<PosteriorSampleSet> {
    check_m(m)?;
    let p = model.predictor();
    let samples = (0..m)
        .into_par_iter()
        .map(|i| p.predict(raw_features, &mut rng::stream(seed, &[tag::WEIGHTS, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSampleSet { samples, kind: DensityKind::Epistemic, seed })
}

/// Joint weight and measurement sampling around known expected counts:
/// sample `i` draws Poisson counts from `(seed, MEASUREMENT, i)` and weights
/// from `(seed, WEIGHTS, i)`.
pub fn combined_density_from_means(
    model: &VariationalMlp,
    expected: &[f64],
    u: f64,
    v: f64,
    m: usize,
    seed: u64,
) -> Result<PosteriorSampleSet> {
    check_m(m)?;
    let p = model.predictor();
    let samples = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[tag::MEASUREMENT, i as u64]);
            let counts = expected.iter().map(|&mean| sample_counts(mean, &mut r)).collect::<Result<Vec<_>>>()?;
            let mut features = vec![0.0; counts.len() + 2];
            counts_to_features(&counts, u, v, &mut features);
            p.predict(&features, &mut rng::stream(seed, &[tag::WEIGHTS, i as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSampleSet { samples, kind: DensityKind::Combined, seed })
}

/// Combined epistemic and aleatoric density for a known release.
pub fn combined_density(
    model: &VariationalMlp,
    s: &Scenario,
    setup: &SimulationSetup,
    m: usize,
    seed: u64,
) -> Result<PosteriorSampleSet> {
    check_m(m)?;
    let expected = expected_array(s, &setup.detectors(), &setup.physics, &setup.grid)?;
    combined_density_from_means(model, &expected, s.u, s.v, m, seed)
}

/// Test-set accuracy with an independent weight draw per row, so repeated
/// evaluations under different seeds show the epistemic fluctuation.
pub fn evaluate_bnn(model: &VariationalMlp, d: &Dataset, seed: u64) -> Result<Metrics> {
    let x = d.features();
    let p = model.predictor();
    let rows: Vec<[f64; 3]> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i).to_vec();
            p.predict(&row, &mut rng::stream(seed, &[tag::WEIGHTS, i as u64]))
        })
        .collect::<Result<_>>()?;
    let pred = Array2::from_shape_fn((rows.len(), 3), |(i, j)| rows[i][j]);
    evaluate_predictions(pred.view(), d.targets().view(), false)
}
