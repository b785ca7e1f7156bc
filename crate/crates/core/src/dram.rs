//! Delayed Rejection Adaptive Metropolis sampling of the release
//! parameters `(x_c, y_c, m_c)` under a Gaussian count likelihood.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{param_stats, ParamStats};
use crate::datagen::SimulationSetup;
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::sensing::{expected_array, DetectorSpec, PhysicsConstants};
use crate::transport::{GridConfig, Scenario};

pub type Theta = [f64; 3];

/// Uniform prior box for `(x_c, y_c, m_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBounds(pub [(f64, f64); 3]);

impl Default for PriorBounds {
    fn default() -> Self {
        Self([(-500.0, 0.0), (-250.0, 250.0), (0.0, 5.0)])
    }
}

impl PriorBounds {
    pub fn contains(&self, t: &Theta) -> bool {
        self.0.iter().zip(t).all(|(&(lo, hi), &v)| lo <= v && v <= hi)
    }

    pub fn log_volume(&self) -> f64 {
        self.0.iter().map(|(lo, hi)| (hi - lo).ln()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|&(lo, hi)| lo.is_finite() && hi.is_finite() && lo < hi) {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior bounds {:?}", self.0)))
        }
    }
}

/// Anything the sampler can target: a sum of squared residuals over
/// `n_obs` observations inside a prior box.
pub trait Target: Sync {
    fn n_obs(&self) -> usize;
    fn bounds(&self) -> &PriorBounds;
    fn sum_squares(&self, theta: &Theta) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceProblem {
    pub observations: Vec<f64>,
    pub detectors: Vec<DetectorSpec>,
    pub physics: PhysicsConstants,
    pub u: f64,
    pub v: f64,
    pub k_x: f64,
    pub k_y: f64,
    pub t_obs: f64,
    pub bounds: PriorBounds,
    pub grid: GridConfig,
}

impl InferenceProblem {
    /// Problem for observed counts under the winds and diffusivities of
    /// `known`; its release fields are ignored.
    pub fn new(observations: Vec<f64>, known: &Scenario, setup: &SimulationSetup) -> Self {
        Self {
            observations,
            detectors: setup.detectors(),
            physics: setup.physics,
            u: known.u,
            v: known.v,
            k_x: known.k_x,
            k_y: known.k_y,
            t_obs: known.t_obs,
            bounds: PriorBounds::default(),
            grid: setup.grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.observations.len() != self.detectors.len() {
            return Err(Error::Structural(format!(
                "{} observations for {} detectors",
                self.observations.len(),
                self.detectors.len()
            )));
        }
        self.bounds.validate()?;
        self.grid.validate()?;
        self.physics.validate()?;
        self.scenario(&[0.0, 0.0, 1.0]).validate()
    }

    pub fn scenario(&self, t: &Theta) -> Scenario {
        Scenario { x_c: t[0], y_c: t[1], m_c: t[2], u: self.u, v: self.v, k_x: self.k_x, k_y: self.k_y, t_obs: self.t_obs }
    }

    /// Expected counts for every detector, no Poisson draw.
    pub fn background(&self) -> Vec<f64> {
        self.detectors.iter().map(|d| d.background_counts()).collect()
    }

    pub fn forward_model(&self, t: &Theta) -> Result<Vec<f64>> {
        expected_array(&self.scenario(t), &self.detectors, &self.physics, &self.grid)
    }
}

fn residual_ss(obs: &[f64], f: &[f64]) -> f64 {
    obs.iter().zip(f).map(|(y, f)| (y - f).powi(2)).sum()
}

impl Target for InferenceProblem {
    fn n_obs(&self) -> usize {
        self.observations.len()
    }

    fn bounds(&self) -> &PriorBounds {
        &self.bounds
    }

    fn sum_squares(&self, t: &Theta) -> Result<f64> {
        Ok(residual_ss(&self.observations, &self.forward_model(t)?))
    }
}

/// `-(n/2) ln(2 pi sigma2) - SS / (2 sigma2) + ln prior`, with `-inf` outside
/// the prior box.
pub fn log_posterior<T: Target + ?Sized>(target: &T, t: &Theta, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    if !target.bounds().contains(t) {
        return Ok(f64::NEG_INFINITY);
    }
    let n = target.n_obs() as f64;
    let ss = target.sum_squares(t)?;
    Ok(-0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - ss / (2.0 * sigma2) - target.bounds().log_volume())
}

/// 3-D Gaussian stand-in for the forward model: the sum of squares is the
/// Mahalanobis form, so with `sigma2 = 1` the posterior is `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    pub mean: Theta,
    pub precision: [[f64; 3]; 3],
    pub bounds: PriorBounds,
}

impl GaussianTarget {
    pub fn new(mean: Theta, cov: [[f64; 3]; 3]) -> Result<Self> {
        let precision = inverse3(&cov).ok_or_else(|| Error::Config("covariance is singular".into()))?;
        let w = 1e6;
        Ok(Self { mean, precision, bounds: PriorBounds([(-w, w); 3]) })
    }
}

impl Target for GaussianTarget {
    fn n_obs(&self) -> usize {
        3
    }

    fn bounds(&self) -> &PriorBounds {
        &self.bounds
    }

    fn sum_squares(&self, t: &Theta) -> Result<f64> {
        let d = [t[0] - self.mean[0], t[1] - self.mean[1], t[2] - self.mean[2]];
        Ok(quad(&self.precision, &d))
    }
}

fn quad(a: &[[f64; 3]; 3], d: &[f64; 3]) -> f64 {
    (0..3).map(|i| (0..3).map(|j| d[i] * a[i][j] * d[j]).sum::<f64>()).sum()
}

fn inverse3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |i: usize, j: usize| {
        let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
        let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
        m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = c(j, i) / det;
        }
    }
    Some(inv)
}

/// Lower-triangular `L` with `L L^T = a`, or `None` if `a` is not positive
/// definite.
pub fn cholesky3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DramConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// First adaptation happens at this iteration.
    pub adapt_start: usize,
    pub adapt_interval: usize,
    /// Second-stage proposal covariance as a fraction of the first.
    pub dr_scale: f64,
    pub delayed_rejection: bool,
    pub initial_cov: [[f64; 3]; 3],
    pub adapt_ridge: f64,
    /// Prior weight of the inverse-gamma sigma2 update.
    pub sigma2_prior_n: f64,
    pub update_sigma2: bool,
    /// Polish the lattice minimizer before sampling.
    pub refine_init: bool,
}

impl Default for DramConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 10_000,
            adapt_start: 500,
            adapt_interval: 100,
            dr_scale: 0.2,
            delayed_rejection: true,
            initial_cov: [[25.0, 0.0, 0.0], [0.0, 25.0, 0.0], [0.0, 0.0, 0.0625]],
            adapt_ridge: 1e-8,
            sigma2_prior_n: 1.0,
            update_sigma2: true,
            refine_init: true,
        }
    }
}

impl DramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "need 0 <= burn_in < iterations, got burn_in {} and iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.adapt_interval == 0 || !(self.dr_scale > 0.0) || !(self.adapt_ridge >= 0.0) {
            return Err(Error::Config("adapt_interval, dr_scale must be positive".into()));
        }
        if !(self.sigma2_prior_n >= 0.0) {
            return Err(Error::Config("sigma2_prior_n must be non-negative".into()));
        }
        cholesky3(&self.initial_cov)
            .map(|_| ())
            .ok_or_else(|| Error::Config("initial proposal covariance is not positive definite".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    First,
    Second,
    Rejected,
}

impl Stage {
    pub fn code(self) -> u8 {
        match self {
            Stage::First => 1,
            Stage::Second => 2,
            Stage::Rejected => 0,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Stage::First),
            2 => Some(Stage::Second),
            0 => Some(Stage::Rejected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub theta: Theta,
    pub sigma2: f64,
    pub stage: Stage,
}

impl ChainState {
    pub fn accepted(&self) -> bool {
        self.stage != Stage::Rejected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub states: Vec<ChainState>,
    pub seed: u64,
    pub initial: Theta,
    pub s0_sq: f64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.states.iter().filter(|s| s.accepted()).count() as f64 / self.states.len().max(1) as f64
    }

    pub fn second_stage_rate(&self) -> f64 {
        self.states.iter().filter(|s| s.stage == Stage::Second).count() as f64 / self.states.len().max(1) as f64
    }

    pub fn column(&self, j: usize, burn_in: usize) -> Vec<f64> {
        self.states.iter().skip(burn_in).map(|s| s.theta[j]).collect()
    }

    pub fn samples(&self, burn_in: usize) -> Vec<Theta> {
        self.states.iter().skip(burn_in).map(|s| s.theta).collect()
    }
}

/// Running mean and covariance of the chain (Welford).
#[derive(Debug, Clone, Default)]
struct RunningCov {
    n: f64,
    mean: [f64; 3],
    m2: [[f64; 3]; 3],
}

impl RunningCov {
    fn push(&mut self, x: &Theta) {
        self.n += 1.0;
        let d: [f64; 3] = std::array::from_fn(|i| x[i] - self.mean[i]);
        for i in 0..3 {
            self.mean[i] += d[i] / self.n;
        }
        for i in 0..3 {
            for j in 0..3 {
                self.m2[i][j] += d[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn cov(&self) -> [[f64; 3]; 3] {
        let mut c = self.m2;
        let den = (self.n - 1.0).max(1.0);
        c.iter_mut().flatten().for_each(|v| *v /= den);
        c
    }
}

fn step(theta: &Theta, l: &[[f64; 3]; 3], scale: f64, z: &[f64; 3]) -> Theta {
    std::array::from_fn(|i| theta[i] + scale * (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>())
}

/// Log proposal density up to a constant, `-0.5 d^T C^-1 d` with `C = L L^T`.
fn log_q(l: &[[f64; 3]; 3], from: &Theta, to: &Theta) -> f64 {
    let d: [f64; 3] = std::array::from_fn(|i| to[i] - from[i]);
    let mut z = [0.0; 3];
    for i in 0..3 {
        z[i] = (d[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    -0.5 * z.iter().map(|v| v * v).sum::<f64>()
}

fn draw3<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    std::array::from_fn(|_| rng.sample(StandardNormal))
}

struct Point {
    theta: Theta,
    ss: f64,
}

fn evaluate<T: Target + ?Sized>(target: &T, t: Theta) -> Result<Option<Point>> {
    if !target.bounds().contains(&t) {
        return Ok(None);
    }
    Ok(Some(Point { theta: t, ss: target.sum_squares(&t)? }))
}

/// Runs DRAM from `theta0`. The chain's random stream is `(seed, CHAIN)`;
/// `s0_sq` is both the initial `sigma2` and the inverse-gamma prior scale.
pub fn dram_run<T: Target + ?Sized>(target: &T, theta0: Theta, s0_sq: f64, cfg: &DramConfig, seed: u64) -> Result<Chain> {
    cfg.validate()?;
    if !(s0_sq > 0.0 && s0_sq.is_finite()) {
        return Err(Error::Init(format!("initial sigma2 must be positive, got {s0_sq}")));
    }
    let mut cur = evaluate(target, theta0)?
        .ok_or_else(|| Error::Init(format!("initial point {theta0:?} lies outside the prior")))?;
    if !cur.ss.is_finite() {
        return Err(Error::Init(format!("non-finite posterior at initial point {theta0:?}")));
    }
    let mut rng = rng::stream(seed, &[tag::CHAIN]);
    let n = target.n_obs() as f64;
    let sd = 2.38f64.powi(2) / 3.0;
    let dr = cfg.dr_scale.sqrt();
    let mut l = cholesky3(&cfg.initial_cov).expect("validated");
    let mut sigma2 = s0_sq;
    let mut stats = RunningCov::default();
    let mut states = Vec::with_capacity(cfg.iterations);
    let log_pi = |p: &Point, s2: f64| -p.ss / (2.0 * s2);

    for it in 0..cfg.iterations {
        let lp0 = log_pi(&cur, sigma2);
        let y1 = step(&cur.theta, &l, 1.0, &draw3(&mut rng));
        let p1 = evaluate(target, y1)?;
        let lp1 = p1.as_ref().map_or(f64::NEG_INFINITY, |p| log_pi(p, sigma2));
        let a1 = (lp1 - lp0).exp().min(1.0);
        let mut stage = Stage::Rejected;
        if rng.random::<f64>() < a1 {
            cur = p1.expect("accepted proposals are inside the prior");
            stage = Stage::First;
        } else if cfg.delayed_rejection {
            let y2 = step(&cur.theta, &l, dr, &draw3(&mut rng));
            let u: f64 = rng.random();
            if let Some(p2) = evaluate(target, y2)? {
                let lp2 = log_pi(&p2, sigma2);
                // first-stage acceptance of y1 seen from y2
                let a1_rev = (lp1 - lp2).exp().min(1.0);
                if a1_rev < 1.0 {
                    let log_num = lp2 + log_q(&l, &y2, &y1) + (1.0 - a1_rev).ln();
                    let log_den = lp0 + log_q(&l, &cur.theta, &y1) + (1.0 - a1).ln();
                    let a2 = (log_num - log_den).exp().min(1.0);
                    if u < a2 {
                        cur = p2;
                        stage = Stage::Second;
                    }
                }
            }
        }

        if cfg.update_sigma2 {
            let shape = 0.5 * (cfg.sigma2_prior_n + n);
            let rate = 0.5 * (cfg.sigma2_prior_n * s0_sq + cur.ss);
            let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?;
            sigma2 = 1.0 / g.sample(&mut rng);
        }

        stats.push(&cur.theta);
        states.push(ChainState { theta: cur.theta, sigma2, stage });

        let done = it + 1;
        if done >= cfg.adapt_start && (done - cfg.adapt_start) % cfg.adapt_interval == 0 {
            let mut c = stats.cov();
            for (i, row) in c.iter_mut().enumerate() {
                row.iter_mut().for_each(|v| *v *= sd);
                row[i] += sd * cfg.adapt_ridge;
            }
            if let Some(new_l) = cholesky3(&c) {
                l = new_l;
            }
        }
    }
    Ok(Chain { states, seed, initial: theta0, s0_sq })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub theta: Theta,
    pub ss_min: f64,
    pub evaluations: usize,
}

/// Lattice used for initialization: `nx` and `ny` inclusive points across
/// the prior box and `nm` cell-centered masses.
pub fn lattice(bounds: &PriorBounds, nx: usize, ny: usize, nm: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let axis = |(lo, hi): (f64, f64), n: usize| -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    };
    let (mlo, mhi) = bounds.0[2];
    let masses = (0..nm).map(|k| mlo + (mhi - mlo) * (k as f64 + 0.5) / nm as f64).collect();
    (axis(bounds.0[0], nx), axis(bounds.0[1], ny), masses)
}

/// Best mass for fixed `(x, y)`: least squares on the affine response,
/// clipped to the prior range.
fn profile_mass(obs: &[f64], unit: &[f64], bg: &[f64], (mlo, mhi): (f64, f64)) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for ((o, u), b) in obs.iter().zip(unit).zip(bg) {
        let g = u - b;
        num += g * (o - b);
        den += g * g;
    }
    let m = if den > 0.0 { (num / den).clamp(mlo, mhi) } else { mlo };
    let f: Vec<f64> = unit.iter().zip(bg).map(|(u, b)| b + m * (u - b)).collect();
    (residual_ss(obs, &f), m)
}

/// Every `(x, y)` node of the 21 x 21 x 20 lattice with its best mass,
/// sorted by sum of squares. Expected counts are affine in mass, so one
/// transport evaluation per `(x, y)` pair serves every mass value.
pub fn lattice_ranking(problem: &InferenceProblem) -> Result<Vec<(f64, Theta)>> {
    problem.validate()?;
    let (xs, ys, ms) = lattice(&problem.bounds, 21, 21, 20);
    let pairs: Vec<(f64, f64)> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| (x, y))).collect();
    let bg = problem.background();
    let mut best = pairs
        .par_iter()
        .map(|&(x, y)| -> Result<(f64, Theta)> {
            let unit = problem.forward_model(&[x, y, 1.0])?;
            let mut best = (f64::INFINITY, [x, y, ms[0]]);
            for &m in &ms {
                let f: Vec<f64> = unit.iter().zip(&bg).map(|(u, b)| b + m * (u - b)).collect();
                let ss = residual_ss(&problem.observations, &f);
                if ss < best.0 {
                    best = (ss, [x, y, m]);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    best.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(best)
}

pub const LATTICE_EVALUATIONS: usize = 21 * 21 * 20;

/// Exhaustive minimization of the sum of squares on the lattice.
pub fn grid_search_init(problem: &InferenceProblem) -> Result<GridSearchResult> {
    let (ss_min, theta) = lattice_ranking(problem)?[0];
    Ok(GridSearchResult { theta, ss_min, evaluations: LATTICE_EVALUATIONS })
}

/// Zooms an 11 x 11 `(x, y)` grid around `start`, halving the window each
/// round, with mass profiled exactly at every node.
fn refine(problem: &InferenceProblem, start: Theta, half_width: (f64, f64), rounds: usize) -> Result<(f64, Theta)> {
    let bg = problem.background();
    let b = problem.bounds.0;
    let (mut cx, mut cy) = (start[0], start[1]);
    let (mut hx, mut hy) = half_width;
    let mut best = (f64::INFINITY, start);
    for _ in 0..rounds {
        let nodes: Vec<(f64, f64)> = (0..11)
            .flat_map(|i| (0..11).map(move |j| (i, j)))
            .map(|(i, j)| {
                let x = (cx + hx * (i as f64 / 5.0 - 1.0)).clamp(b[0].0, b[0].1);
                let y = (cy + hy * (j as f64 / 5.0 - 1.0)).clamp(b[1].0, b[1].1);
                (x, y)
            })
            .collect();
        let round = nodes
            .par_iter()
            .map(|&(x, y)| -> Result<(f64, Theta)> {
                let unit = problem.forward_model(&[x, y, 1.0])?;
                let (ss, m) = profile_mass(&problem.observations, &unit, &bg, b[2]);
                Ok((ss, [x, y, m]))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold((f64::INFINITY, start), |a, c| if c.0 < a.0 { c } else { a });
        if round.0 < best.0 {
            best = round;
        }
        (cx, cy) = (best.1[0], best.1[1]);
        hx *= 0.5;
        hy *= 0.5;
    }
    Ok(best)
}

/// Lattice search followed by a local zoom around the three best lattice
/// points, mass profiled exactly. The lattice alone is too coarse for the
/// narrow valley of the sum-of-squares surface.
pub fn refined_init(problem: &InferenceProblem) -> Result<GridSearchResult> {
    const ROUNDS: usize = 8;
    let ranking = lattice_ranking(problem)?;
    let b = problem.bounds.0;
    let step = ((b[0].1 - b[0].0) / 20.0, (b[1].1 - b[1].0) / 20.0);
    let mut best = ranking[0];
    for &(_, t) in ranking.iter().take(3) {
        let r = refine(problem, t, step, ROUNDS)?;
        if r.0 < best.0 {
            best = r;
        }
    }
    Ok(GridSearchResult { theta: best.1, ss_min: best.0, evaluations: LATTICE_EVALUATIONS + 3 * ROUNDS * 121 })
}

/// Grid-search initialization followed by DRAM, with `s0^2 = SS_min / n`.
/// `cfg.refine_init` selects [`refined_init`] over the plain lattice.
pub fn run_inference(problem: &InferenceProblem, cfg: &DramConfig, seed: u64) -> Result<(GridSearchResult, Chain)> {
    let init = if cfg.refine_init { refined_init(problem)? } else { grid_search_init(problem)? };
    let s0_sq = (init.ss_min / problem.n_obs() as f64).max(1e-12);
    let chain = dram_run(problem, init.theta, s0_sq, cfg, seed)?;
    Ok((init, chain))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub burn_in: usize,
    pub n_samples: usize,
    pub params: [ParamStats; 3],
    pub acceptance_rate: f64,
    pub sigma2_mean: f64,
}

/// Mean, standard deviation and central 95% interval of the chain after
/// discarding `burn_in` states.
pub fn burn_and_summarize(chain: &Chain, burn_in: usize) -> Result<PosteriorSummary> {
    if burn_in >= chain.len() {
        return Err(Error::Config(format!("burn_in {burn_in} leaves no samples from {}", chain.len())));
    }
    let mut params = [ParamStats { mean: 0.0, sd: 0.0, lo: 0.0, hi: 0.0, contains_truth: None }; 3];
    for (j, p) in params.iter_mut().enumerate() {
        *p = param_stats(&chain.column(j, burn_in), 0.95, None)?;
    }
    let kept = &chain.states[burn_in..];
    Ok(PosteriorSummary {
        burn_in,
        n_samples: kept.len(),
        params,
        acceptance_rate: kept.iter().filter(|s| s.accepted()).count() as f64 / kept.len() as f64,
        sigma2_mean: kept.iter().map(|s| s.sigma2).sum::<f64>() / kept.len() as f64,
    })
}
