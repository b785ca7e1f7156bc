//! Histograms, kernel density estimates, credible intervals and
//! cross-method comparison of posterior samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::BinGrid;

pub const PARAM_NAMES: [&str; 3] = ["x_c", "y_c", "m_c"];
pub const REPORT_VERSION: u32 = 1;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateKind {
    Histogram,
    GaussianKde,
}

/// A one-dimensional density on a support grid. Histograms keep their bin
/// edges and report one height per bin at the bin midpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub kind: EstimateKind,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub edges: Option<Vec<f64>>,
    pub bandwidth: Option<f64>,
    pub source: String,
    pub n_samples: usize,
}

impl DensityEstimate {
    /// Histograms: sum of height times width. KDEs: trapezoidal rule.
    pub fn integral(&self) -> f64 {
        match &self.edges {
            Some(e) => self.density.iter().zip(e.windows(2)).map(|(h, w)| h * (w[1] - w[0])).sum(),
            None => self
                .grid
                .windows(2)
                .zip(self.density.windows(2))
                .map(|(g, d)| 0.5 * (g[1] - g[0]) * (d[0] + d[1]))
                .sum(),
        }
    }

    pub fn with_source(mut self, source: &str) -> Self {
        self.source = source.to_string();
        self
    }
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Config("at least one sample is required".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("samples must be finite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bins {
    Count(usize),
    Edges(Vec<f64>),
}

/// Normalized histogram. With a bin count the edges span the sample range
/// (widened by 0.5 either side for constant samples); the last edge is
/// inclusive and samples outside explicit edges are ignored.
pub fn histogram(samples: &[f64], bins: Bins) -> Result<DensityEstimate> {
    check_samples(samples)?;
    let edges = match bins {
        Bins::Count(0) => return Err(Error::Config("bin count must be positive".into())),
        Bins::Count(n) => {
            let (mut lo, mut hi) = min_max(samples);
            if lo == hi {
                lo -= 0.5;
                hi += 0.5;
            }
            (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
        }
        Bins::Edges(e) => {
            if e.len() < 2 || e.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config("bin edges must be strictly increasing".into()));
            }
            e
        }
    };
    let n_bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[n_bins]);
    let mut counts = vec![0usize; n_bins];
    for &s in samples {
        if s < lo || s > hi {
            continue;
        }
        let k = edges.partition_point(|&e| e <= s).saturating_sub(1).min(n_bins - 1);
        counts[k] += 1;
    }
    let inside: usize = counts.iter().sum();
    if inside == 0 {
        return Err(Error::Config("no samples fall inside the bin edges".into()));
    }
    let density = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c as f64 / (inside as f64 * (w[1] - w[0])))
        .collect();
    Ok(DensityEstimate {
        kind: EstimateKind::Histogram,
        grid: edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect(),
        density,
        edges: Some(edges),
        bandwidth: None,
        source: String::new(),
        n_samples: samples.len(),
    })
}

/// Classification probabilities read directly as a histogram over the bins.
pub fn from_bin_probabilities(probs: &[f64], bins: &BinGrid) -> Result<DensityEstimate> {
    if probs.len() != bins.n {
        return Err(Error::Structural(format!("{} probabilities for {} bins", probs.len(), bins.n)));
    }
    let edges: Vec<f64> = (0..=bins.n).map(|i| bins.lo + bins.width() * i as f64).collect();
    let total: f64 = probs.iter().sum();
    Ok(DensityEstimate {
        kind: EstimateKind::Histogram,
        grid: bins.midpoints(),
        density: probs.iter().map(|p| p / (total * bins.width())).collect(),
        edges: Some(edges),
        bandwidth: None,
        source: "classification".into(),
        n_samples: 0,
    })
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(samples: &[f64], p: f64) -> Result<f64> {
    check_samples(samples)?;
    Ok(quantile_sorted(&sorted(samples), p))
}

/// Central interval between the `(1 - level)/2` and `(1 + level)/2`
/// empirical quantiles.
pub fn credible_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("credible level must lie in (0, 1), got {level}")));
    }
    check_samples(samples)?;
    let s = sorted(samples);
    Ok((quantile_sorted(&s, 0.5 * (1.0 - level)), quantile_sorted(&s, 0.5 * (1.0 + level))))
}

pub fn mean_var(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    Silverman,
    Fixed(f64),
}

/// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, falling back to the standard
/// deviation when the interquartile range is zero.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    check_samples(samples)?;
    let (_, var) = mean_var(samples);
    let sd = var.sqrt();
    let s = sorted(samples);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::Domain("samples have zero spread; a KDE is degenerate".into()));
    }
    Ok(0.9 * spread * (samples.len() as f64).powf(-0.2))
}

fn resolve_bandwidth(samples: &[f64], bw: Bandwidth) -> Result<f64> {
    match bw {
        Bandwidth::Silverman => silverman_bandwidth(samples),
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
        Bandwidth::Fixed(h) => Err(Error::Config(format!("bandwidth must be positive, got {h}"))),
    }
}

/// Evaluation grid spanning the samples plus seven bandwidths each side,
/// with spacing at most a quarter bandwidth.
pub fn kde_grid(samples: &[f64], h: f64) -> Vec<f64> {
    let (lo, hi) = min_max(samples);
    let (lo, hi) = (lo - 7.0 * h, hi + 7.0 * h);
    let n = (((hi - lo) / (0.25 * h)).ceil() as usize + 1).max(512);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn kde_eval(samples: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let norm = INV_SQRT_2PI / (h * samples.len() as f64);
    grid.par_iter()
        .map(|&g| {
            samples
                .iter()
                .map(|&s| {
                    let z = (g - s) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Gaussian kernel density estimate. Without an explicit `grid` the support
/// is chosen by [`kde_grid`].
pub fn gaussian_kde(samples: &[f64], bw: Bandwidth, grid: Option<&[f64]>) -> Result<DensityEstimate> {
    check_samples(samples)?;
    let (lo, hi) = min_max(samples);
    if samples.len() < 2 || lo == hi {
        return Err(Error::Domain("a KDE needs at least two distinct samples".into()));
    }
    let h = resolve_bandwidth(samples, bw)?;
    let grid = grid.map(<[f64]>::to_vec).unwrap_or_else(|| kde_grid(samples, h));
    let density = kde_eval(samples, h, &grid);
    Ok(DensityEstimate {
        kind: EstimateKind::GaussianKde,
        grid,
        density,
        edges: None,
        bandwidth: Some(h),
        source: String::new(),
        n_samples: samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDensity {
    pub pooled: DensityEstimate,
    pub members: Vec<DensityEstimate>,
}

/// Per-set KDEs on a common grid and their equal-weight mixture. Each member
/// keeps its own bandwidth, so identical sets give back the single-set KDE.
pub fn ensemble_kde(sets: &[Vec<f64>], bw: Bandwidth) -> Result<EnsembleDensity> {
    if sets.is_empty() {
        return Err(Error::Config("ensemble needs at least one sample set".into()));
    }
    let hs = sets.iter().map(|s| resolve_bandwidth(s, bw)).collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = sets.concat();
    let h_min = hs.iter().cloned().fold(f64::INFINITY, f64::min);
    let h_max = hs.iter().cloned().fold(0.0, f64::max);
    let (lo, hi) = min_max(&all);
    let (lo, hi) = (lo - 7.0 * h_max, hi + 7.0 * h_max);
    let n = (((hi - lo) / (0.25 * h_min)).ceil() as usize + 1).max(512);
    let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let members = sets
        .iter()
        .zip(&hs)
        .map(|(s, &h)| gaussian_kde(s, Bandwidth::Fixed(h), Some(&grid)))
        .collect::<Result<Vec<_>>>()?;
    let k = members.len() as f64;
    let density = (0..grid.len()).map(|i| members.iter().map(|m| m.density[i]).sum::<f64>() / k).collect();
    let pooled = DensityEstimate {
        kind: EstimateKind::GaussianKde,
        grid,
        density,
        edges: None,
        bandwidth: Some(hs.iter().sum::<f64>() / k),
        source: "ensemble".into(),
        n_samples: all.len(),
    };
    Ok(EnsembleDensity { pooled, members })
}

/// 2-D normalized histogram over `(x, y)` pairs, row-major with y outer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointHistogram {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub density: Vec<f64>,
}

pub fn joint_histogram(xs: &[f64], ys: &[f64], nx: usize, ny: usize) -> Result<JointHistogram> {
    check_samples(xs)?;
    check_samples(ys)?;
    if xs.len() != ys.len() || nx == 0 || ny == 0 {
        return Err(Error::Config("joint histogram needs paired samples and positive bin counts".into()));
    }
    let edges = |v: &[f64], n: usize| -> Vec<f64> {
        let (mut lo, mut hi) = min_max(v);
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
    };
    let (xe, ye) = (edges(xs, nx), edges(ys, ny));
    let (dx, dy) = (xe[1] - xe[0], ye[1] - ye[0]);
    let mut density = vec![0.0; nx * ny];
    let w = 1.0 / (xs.len() as f64 * dx * dy);
    for (&x, &y) in xs.iter().zip(ys) {
        let i = (((x - xe[0]) / dx) as usize).min(nx - 1);
        let j = (((y - ye[0]) / dy) as usize).min(ny - 1);
        density[j * nx + i] += w;
    }
    Ok(JointHistogram { x_edges: xe, y_edges: ye, density })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contains_truth: Option<bool>,
}

pub fn param_stats(samples: &[f64], level: f64, truth: Option<f64>) -> Result<ParamStats> {
    let (lo, hi) = credible_interval(samples, level)?;
    let (mean, var) = mean_var(samples);
    Ok(ParamStats {
        mean,
        sd: var.sqrt(),
        lo,
        hi,
        contains_truth: truth.map(|t| lo <= t && t <= hi),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub source: String,
    pub n_samples: usize,
    pub params: [ParamStats; 3],
}

impl SourceSummary {
    pub fn variances(&self) -> [f64; 3] {
        self.params.map(|p| p.sd * p.sd)
    }

    pub fn contains_truth(&self) -> Option<bool> {
        self.params.iter().map(|p| p.contains_truth).collect::<Option<Vec<_>>>().map(|v| v.iter().all(|&b| b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: String,
    pub denominator: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub version: u32,
    pub level: f64,
    pub truth: Option<[f64; 3]>,
    pub sources: Vec<SourceSummary>,
    /// Per-parameter `var(numerator) / var(denominator)` for every ordered pair.
    pub variance_ratios: Vec<Ratio>,
    pub timings: Vec<(String, f64)>,
    /// `time(numerator) / time(denominator)` for every ordered pair.
    pub timing_ratios: Vec<Ratio>,
}

impl ComparisonReport {
    pub fn source(&self, tag: &str) -> Option<&SourceSummary> {
        self.sources.iter().find(|s| s.source == tag)
    }

    pub fn variance_ratio(&self, num: &str, den: &str) -> Option<&[f64]> {
        self.variance_ratios
            .iter()
            .find(|r| r.numerator == num && r.denominator == den)
            .map(|r| r.values.as_slice())
    }

    pub fn timing_ratio(&self, num: &str, den: &str) -> Option<f64> {
        self.timing_ratios
            .iter()
            .find(|r| r.numerator == num && r.denominator == den)
            .map(|r| r.values[0])
    }
}

/// Summaries of each tagged sample source, truth containment at `level`,
/// and pairwise variance and timing ratios.
pub fn compare(
    sources: &[(String, Vec<[f64; 3]>)],
    truth: Option<[f64; 3]>,
    timings: &[(String, f64)],
    level: f64,
) -> Result<ComparisonReport> {
    if sources.len() < 2 {
        return Err(Error::Config("comparison needs at least two sources".into()));
    }
    let summaries = sources
        .iter()
        .map(|(tag, samples)| {
            let mut params = [ParamStats { mean: 0.0, sd: 0.0, lo: 0.0, hi: 0.0, contains_truth: None }; 3];
            for (j, p) in params.iter_mut().enumerate() {
                let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
                *p = param_stats(&col, level, truth.map(|t| t[j]))?;
            }
            Ok(SourceSummary { source: tag.clone(), n_samples: samples.len(), params })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut variance_ratios = Vec::new();
    for a in &summaries {
        for b in &summaries {
            if a.source != b.source {
                let (va, vb) = (a.variances(), b.variances());
                variance_ratios.push(Ratio {
                    numerator: a.source.clone(),
                    denominator: b.source.clone(),
                    values: (0..3).map(|j| va[j] / vb[j]).collect(),
                });
            }
        }
    }
    let mut timing_ratios = Vec::new();
    for (a, ta) in timings {
        for (b, tb) in timings {
            if a != b {
                timing_ratios.push(Ratio { numerator: a.clone(), denominator: b.clone(), values: vec![ta / tb] });
            }
        }
    }
    Ok(ComparisonReport {
        version: REPORT_VERSION,
        level,
        truth,
        sources: summaries,
        variance_ratios,
        timings: timings.to_vec(),
        timing_ratios,
    })
}
