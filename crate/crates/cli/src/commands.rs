use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use plume_core::analysis::{self, Bandwidth, DensityEstimate, ComparisonReport};
use plume_core::bnn::{self, DensityKind, PosteriorSampleSet, VariationalMlp};
use plume_core::datagen::{generate_dataset, make_features, split_dataset, Dataset, DetectorArrayLayout, SimulationSetup, SplitTag};
use plume_core::dram::{self, InferenceProblem, PosteriorSummary};
use plume_core::io::{self as fio, LoadedModel, SavedModel};
use plume_core::nn::{binned_expectation, ClassificationModel, Metrics, RegressionModel};
use plume_core::rng;
use plume_core::sensing::MeasurementVector;
use plume_core::transport::Scenario;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::fail::{Failure, Stage, StageExt};
use crate::meta::{self, DatasetMeta, Header, MeasurementMeta, OutputMeta};

pub const REPORT_VERSION: u32 = 1;

/// Resolved configuration shared by every command.
pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Self {
        let hash = cfg.hash();
        Self { cfg, hash }
    }

    fn header(&self, artifact: &str, seed: u64) -> Header {
        Header::new(artifact, seed, &self.hash)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Regression,
    Classification,
    Bnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Epistemic,
    Combined,
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn ensure_parent(p: &Path) -> Result<(), Failure> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).stage(Stage::Other)?;
    }
    Ok(())
}

/// `data.csv` + `train` -> `data.train.csv`.
pub fn split_path(p: &Path, tag: &str) -> PathBuf {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    p.with_file_name(format!("{stem}.{tag}.csv"))
}

fn split_name(t: SplitTag) -> &'static str {
    match t {
        SplitTag::Full => "full",
        SplitTag::Train => "train",
        SplitTag::Validation => "val",
        SplitTag::Test => "test",
    }
}

fn write_dataset(ctx: &Ctx, path: &Path, d: &Dataset) -> Result<(), Failure> {
    fio::write_dataset(path, d).stage(Stage::Simulation)?;
    meta::write(
        path,
        &DatasetMeta {
            header: ctx.header("dataset", d.seed),
            rows: d.len(),
            split: split_name(d.split).into(),
            setup: ctx.cfg.setup.clone(),
        },
    )
}

pub fn read_dataset(path: &Path) -> Result<Dataset, Failure> {
    meta::require(path, "create it with `plume gen-data`")?;
    let m: Option<DatasetMeta> = meta::read(path)?;
    let mut d = fio::read_dataset(path, m.as_ref().map_or(0, |m| m.header.seed)).stage(Stage::Config)?;
    d.split = match m.as_ref().map(|m| m.split.as_str()) {
        Some("train") => SplitTag::Train,
        Some("val") => SplitTag::Validation,
        Some("test") => SplitTag::Test,
        _ => SplitTag::Full,
    };
    Ok(d)
}

/// Writes the full dataset and, with `split`, its train/val/test parts.
pub fn gen_data(ctx: &Ctx, count: usize, out: &Path, split: bool) -> Result<Vec<PathBuf>, Failure> {
    ensure_parent(out)?;
    let seed = ctx.cfg.seed;
    let t = Instant::now();
    let d = generate_dataset(count, seed, &ctx.cfg.setup).stage(Stage::Simulation)?;
    eprintln!("generated {count} rows in {:.1} s", t.elapsed().as_secs_f64());
    write_dataset(ctx, out, &d)?;
    let mut written = vec![out.to_path_buf()];
    if split {
        let (tr, va, te) = split_dataset(&d, ctx.cfg.data.split).stage(Stage::Config)?;
        for (part, tag) in [(tr, "train"), (va, "val"), (te, "test")] {
            let p = split_path(out, tag);
            write_dataset(ctx, &p, &part)?;
            written.push(p);
        }
    }
    Ok(written)
}

pub fn simulate(ctx: &Ctx, s: &Scenario, out: &Path) -> Result<MeasurementVector, Failure> {
    s.validate().stage(Stage::Config)?;
    ensure_parent(out)?;
    let seed = ctx.cfg.seed;
    let setup = &ctx.cfg.setup;
    let m = setup.observe(s, seed).stage(Stage::Simulation)?;
    fio::write_measurements(out, &m, &setup.detectors()).stage(Stage::Simulation)?;
    meta::write(
        out,
        &MeasurementMeta {
            header: ctx.header("measurements", seed),
            t_obs: s.t_obs,
            u: s.u,
            v: s.v,
            k_x: s.k_x,
            k_y: s.k_y,
            physics: setup.physics,
            grid: setup.grid,
            scenario: Some(*s),
        },
    )?;
    Ok(m)
}

/// Measurement counts, the setup matching the file's detector positions,
/// and the ambient conditions. Without a sidecar the conditions come from
/// the configured scenario, with winds optionally overridden.
pub struct LoadedMeasurements {
    pub counts: MeasurementVector,
    pub setup: SimulationSetup,
    pub conditions: Scenario,
    pub truth: Option<Scenario>,
}

pub fn load_measurements(ctx: &Ctx, path: &Path, wind: Option<(f64, f64)>) -> Result<LoadedMeasurements, Failure> {
    meta::require(path, "create it with `plume simulate`")?;
    let m: Option<MeasurementMeta> = meta::read(path)?;
    let mut setup = ctx.cfg.setup.clone();
    let (mut conditions, truth) = match &m {
        Some(m) => {
            setup.physics = m.physics;
            (m.conditions(), m.scenario)
        }
        None => {
            eprintln!("warning: {} has no metadata sidecar; using configured conditions", path.display());
            (ctx.cfg.inference.scenario, None)
        }
    };
    if let Some((u, v)) = wind {
        conditions.u = u;
        conditions.v = v;
    }
    let (counts, positions) = fio::read_measurements(path, conditions.t_obs).stage(Stage::Config)?;
    setup.layout = DetectorArrayLayout { positions };
    setup.validate().stage(Stage::Config)?;
    Ok(LoadedMeasurements { counts, setup, conditions, truth })
}

#[derive(Debug, Clone, Serialize)]
struct Provenance<'a> {
    config_hash: &'a str,
    data: String,
    data_sha256: String,
    rows: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    final_train_loss: Option<f64>,
    final_val_loss: Option<f64>,
}

fn progress_every(epochs: usize) -> usize {
    (epochs / 10).max(1)
}

pub fn train(ctx: &Ctx, kind: ModelKind, data: &Path, val: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let train = read_dataset(data)?;
    let val = val.map(read_dataset).transpose()?;
    ensure_parent(out)?;
    let t = Instant::now();
    let log = |epochs: usize| {
        move |r: &plume_core::nn::EpochRecord| {
            if (r.epoch + 1) % progress_every(epochs) == 0 {
                match r.val_loss {
                    Some(v) => eprintln!("epoch {:>5}  train {:.5}  val {:.5}", r.epoch + 1, r.train_loss, v),
                    None => eprintln!("epoch {:>5}  train {:.5}", r.epoch + 1, r.train_loss),
                }
            }
        }
    };
    let (saved, history, epochs, batch, lr) = match kind {
        ModelKind::Regression => {
            let c = ctx.cfg.regression_config();
            let (m, h) = RegressionModel::fit_with_progress(&train, val.as_ref(), &c, log(c.epochs)).stage(Stage::Training)?;
            (SavedModel::from(&m), h, c.epochs, c.batch_size, c.optimizer.learning_rate)
        }
        ModelKind::Classification => {
            let c = ctx.cfg.classification_config();
            let (m, h) =
                ClassificationModel::fit_with_progress(&train, val.as_ref(), &c, log(c.epochs)).stage(Stage::Training)?;
            (SavedModel::from(&m), h, c.epochs, c.batch_size, c.optimizer.learning_rate)
        }
        ModelKind::Bnn => {
            let c = ctx.cfg.bnn_config();
            let (m, h) = bnn::train_bnn_with_progress(&train, val.as_ref(), &c, log(c.epochs)).stage(Stage::Training)?;
            (SavedModel::from(&m), h, c.epochs, c.batch_size, c.optimizer.learning_rate)
        }
    };
    eprintln!("trained {kind:?} in {:.1} s", t.elapsed().as_secs_f64());
    let prov = Provenance {
        config_hash: &ctx.hash,
        data: file_name(data),
        data_sha256: meta::sha256_file(data)?,
        rows: train.len(),
        epochs,
        batch_size: batch,
        learning_rate: lr,
        final_train_loss: history.last_train_loss(),
        final_val_loss: history.records.last().and_then(|r| r.val_loss),
    };
    let prov = serde_json::to_value(prov).expect("provenance serializes");
    fio::write_model(out, saved, ctx.cfg.seed, prov).stage(Stage::Other)
}

pub fn load_model(path: &Path) -> Result<LoadedModel, Failure> {
    meta::require(path, "create it with `plume train`")?;
    Ok(fio::read_model(path).stage(Stage::Config)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub model_kind: String,
    pub model: String,
    pub data: String,
    pub seed: u64,
    pub config_hash: String,
    pub metrics: Metrics,
    /// Location errors of repeated weight-resampled evaluations (BNN only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repeat_location_errors: Vec<f64>,
    /// `(max - min) / mean` of the repeated location errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_fluctuation: Option<f64>,
    /// Largest `|sum - 1|` over both softmax blocks of every row
    /// (classification only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub softmax_max_deviation: Option<f64>,
}

pub fn softmax_deviation(m: &ClassificationModel, d: &Dataset) -> Result<f64, Failure> {
    let p = m.probabilities(d.features().view()).stage(Stage::Inference)?;
    let nx = m.x_bins.n;
    Ok(p.outer_iter()
        .map(|row| {
            let a: f64 = row.iter().take(nx).sum();
            let b: f64 = row.iter().skip(nx).sum();
            (a - 1.0).abs().max((b - 1.0).abs())
        })
        .fold(0.0, f64::max))
}

pub fn bnn_repeats(m: &VariationalMlp, d: &Dataset, seed: u64, repeats: usize) -> Result<(Metrics, Vec<f64>), Failure> {
    let mut errors = Vec::with_capacity(repeats);
    let mut first = None;
    for r in 0..repeats.max(1) {
        let met = bnn::evaluate_bnn(m, d, rng::derive_seed(seed, &[r as u64])).stage(Stage::Inference)?;
        errors.push(met.mean_location_error);
        first.get_or_insert(met);
    }
    Ok((first.expect("at least one repeat"), errors))
}

pub fn relative_fluctuation(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (hi - lo) / mean
}

pub fn evaluate(
    ctx: &Ctx,
    model: &Path,
    data: &Path,
    report: &Path,
    per_row: bool,
    repeats: usize,
) -> Result<EvalReport, Failure> {
    let loaded = load_model(model)?;
    let d = read_dataset(data)?;
    let seed = ctx.cfg.seed;
    let mut r = EvalReport {
        version: REPORT_VERSION,
        model_kind: loaded.kind().into(),
        model: file_name(model),
        data: file_name(data),
        seed,
        config_hash: ctx.hash.clone(),
        metrics: Metrics { n_rows: 0, mean_location_error: 0.0, mass_mae: None, per_row: None },
        repeat_location_errors: vec![],
        relative_fluctuation: None,
        softmax_max_deviation: None,
    };
    match &loaded {
        LoadedModel::Regression(m) => r.metrics = m.evaluate(&d, per_row).stage(Stage::Inference)?,
        LoadedModel::Classification(m) => {
            r.metrics = m.evaluate(&d, per_row).stage(Stage::Inference)?;
            r.softmax_max_deviation = Some(softmax_deviation(m, &d)?);
        }
        LoadedModel::Bnn(m) => {
            let (met, errors) = bnn_repeats(m, &d, seed, repeats)?;
            r.metrics = met;
            if per_row {
                let x = d.features();
                let p = m.predictor();
                let rows: Vec<[f64; 3]> = (0..x.nrows())
                    .map(|i| p.predict(&x.row(i).to_vec(), &mut rng::stream(rng::derive_seed(seed, &[0]), &[rng::tag::WEIGHTS, i as u64])))
                    .collect::<plume_core::Result<_>>()
                    .stage(Stage::Inference)?;
                let pred = Array2::from_shape_fn((rows.len(), 3), |(i, j)| rows[i][j]);
                r.metrics = plume_core::nn::evaluate_predictions(pred.view(), d.targets().view(), true).stage(Stage::Inference)?;
            }
            if errors.len() > 1 {
                r.relative_fluctuation = Some(relative_fluctuation(&errors));
            }
            r.repeat_location_errors = errors;
        }
    }
    ensure_parent(report)?;
    fio::write_json(report, &r).stage(Stage::Other)?;
    Ok(r)
}

pub fn write_samples(ctx: &Ctx, out: &Path, set: &PosteriorSampleSet, inputs: Vec<String>, elapsed: f64, details: serde_json::Value) -> Result<(), Failure> {
    ensure_parent(out)?;
    fio::write_samples(out, &set.samples).stage(Stage::Other)?;
    let mut details = details;
    if let serde_json::Value::Object(o) = &mut details {
        o.insert("kind".into(), serde_json::to_value(set.kind).expect("kind serializes"));
        o.insert("samples".into(), set.len().into());
    }
    meta::write(
        out,
        &OutputMeta { header: ctx.header("samples", set.seed), inputs, elapsed_seconds: Some(elapsed), details },
    )
}

/// Runs a trained model on one measurement file.
///
/// BNN: `samples` posterior draws. For the combined density the expected
/// counts come from the release recorded in the sidecar; without one the
/// observed counts stand in for the Poisson means.
/// Classification: bin probabilities. Regression: one point estimate.
pub fn infer(
    ctx: &Ctx,
    model: &Path,
    measurements: &Path,
    mode: Mode,
    samples: usize,
    wind: Option<(f64, f64)>,
    out: &Path,
) -> Result<(), Failure> {
    let loaded = load_model(model)?;
    let lm = load_measurements(ctx, measurements, wind)?;
    let seed = ctx.cfg.seed;
    let features = make_features(&lm.counts, lm.conditions.u, lm.conditions.v);
    let inputs = vec![file_name(model), file_name(measurements)];
    ensure_parent(out)?;
    match loaded {
        LoadedModel::Bnn(m) => {
            let t = Instant::now();
            let (set, bootstrap) = match (mode, lm.truth) {
                (Mode::Epistemic, _) => (bnn::epistemic_density(&m, &features, samples, seed), false),
                (Mode::Combined, Some(s)) => (bnn::combined_density(&m, &s, &lm.setup, samples, seed), false),
                (Mode::Combined, None) => {
                    let means = lm.counts.as_f64();
                    (bnn::combined_density_from_means(&m, &means, lm.conditions.u, lm.conditions.v, samples, seed), true)
                }
            };
            let set = set.stage(Stage::Inference)?;
            let el = t.elapsed().as_secs_f64();
            eprintln!("{} {:?} samples in {el:.2} s", set.len(), set.kind);
            write_samples(ctx, out, &set, inputs, el, serde_json::json!({ "bootstrap": bootstrap }))
        }
        LoadedModel::Classification(m) => {
            let x = Array2::from_shape_vec((1, features.len()), features).expect("one row");
            let p = m.probabilities(x.view()).stage(Stage::Inference)?;
            let row = p.row(0).to_vec();
            fio::write_probabilities(out, &row, &m.x_bins, &m.y_bins).stage(Stage::Other)?;
            let (ex, ey) = (binned_expectation(&row[..m.x_bins.n], &m.x_bins), binned_expectation(&row[m.x_bins.n..], &m.y_bins));
            eprintln!("binned expectation ({ex:.2}, {ey:.2})");
            meta::write(
                out,
                &OutputMeta {
                    header: ctx.header("probabilities", seed),
                    inputs,
                    elapsed_seconds: None,
                    details: serde_json::json!({ "expected_x_c": ex, "expected_y_c": ey }),
                },
            )
        }
        LoadedModel::Regression(m) => {
            let p = m.predict_one(&features).stage(Stage::Inference)?;
            eprintln!("prediction ({:.2}, {:.2}, {:.3})", p[0], p[1], p[2]);
            let set = PosteriorSampleSet { samples: vec![p], kind: DensityKind::Epistemic, seed };
            fio::write_samples(out, &set.samples).stage(Stage::Other)?;
            meta::write(
                out,
                &OutputMeta { header: ctx.header("prediction", seed), inputs, elapsed_seconds: None, details: serde_json::Value::Null },
            )
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DramDetails {
    pub iterations: usize,
    pub burn_in: usize,
    pub grid_points: usize,
    pub init: dram::GridSearchResult,
    pub s0_sq: f64,
    pub summary: PosteriorSummary,
}

pub fn run_dram(ctx: &Ctx, measurements: &Path, wind: Option<(f64, f64)>, out: &Path) -> Result<DramDetails, Failure> {
    let lm = load_measurements(ctx, measurements, wind)?;
    let cfg = &ctx.cfg.dram;
    cfg.validate().stage(Stage::Config)?;
    let seed = ctx.cfg.seed;
    let problem = InferenceProblem::new(lm.counts.as_f64(), &lm.conditions, &lm.setup);
    let t = Instant::now();
    let (init, chain) = dram::run_inference(&problem, cfg, seed).stage(Stage::Inference)?;
    let el = t.elapsed().as_secs_f64();
    let summary = dram::burn_and_summarize(&chain, cfg.burn_in).stage(Stage::Inference)?;
    eprintln!(
        "{} iterations in {el:.1} s, acceptance {:.3}, means ({:.2}, {:.2}, {:.3})",
        chain.len(),
        summary.acceptance_rate,
        summary.params[0].mean,
        summary.params[1].mean,
        summary.params[2].mean
    );
    ensure_parent(out)?;
    fio::write_chain(out, &chain).stage(Stage::Other)?;
    let details = DramDetails {
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        grid_points: lm.setup.grid.n_points,
        init,
        s0_sq: chain.s0_sq,
        summary,
    };
    meta::write(
        out,
        &OutputMeta {
            header: ctx.header("chain", seed),
            inputs: vec![file_name(measurements)],
            elapsed_seconds: Some(el),
            details: serde_json::to_value(&details).expect("details serialize"),
        },
    )?;
    Ok(details)
}

pub struct CompareInputs<'a> {
    pub dram: &'a Path,
    pub bnn: &'a Path,
    pub bnn_epistemic: Option<&'a Path>,
    pub classification: Option<&'a Path>,
    pub truth: Option<[f64; 3]>,
    pub burn_in: Option<usize>,
    pub out: &'a Path,
    pub plots: Option<&'a Path>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationSummary {
    pub expected_x_c: f64,
    pub expected_y_c: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareOutput {
    #[serde(flatten)]
    pub report: ComparisonReport,
    pub burn_in: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationSummary>,
}

fn elapsed_of(path: &Path) -> Result<Option<f64>, Failure> {
    Ok(meta::read::<OutputMeta>(path)?.and_then(|m| m.elapsed_seconds))
}

pub fn compare(ctx: &Ctx, a: &CompareInputs) -> Result<CompareOutput, Failure> {
    meta::require(a.dram, "create it with `plume dram`")?;
    meta::require(a.bnn, "create it with `plume infer --mode combined`")?;
    let chain = fio::read_chain(a.dram, 0).stage(Stage::Config)?;
    let chain_meta: Option<OutputMeta> = meta::read(a.dram)?;
    let burn_in = a
        .burn_in
        .or_else(|| chain_meta.as_ref().and_then(|m| m.details.get("burn_in")).and_then(|b| b.as_u64()).map(|b| b as usize))
        .unwrap_or(ctx.cfg.dram.burn_in);
    if burn_in >= chain.len() {
        return Err(Failure::new(Stage::Config, format!("burn-in {burn_in} leaves no samples from a chain of {}", chain.len())));
    }
    let mut sources = vec![("dram".to_string(), chain.samples(burn_in))];
    let mut timings = Vec::new();
    if let Some(t) = chain_meta.and_then(|m| m.elapsed_seconds) {
        timings.push(("dram".to_string(), t));
    }
    sources.push(("bnn_combined".into(), fio::read_samples(a.bnn).stage(Stage::Config)?));
    if let Some(t) = elapsed_of(a.bnn)? {
        timings.push(("bnn_combined".into(), t));
    }
    if let Some(p) = a.bnn_epistemic {
        meta::require(p, "create it with `plume infer --mode epistemic`")?;
        sources.push(("bnn_epistemic".into(), fio::read_samples(p).stage(Stage::Config)?));
        if let Some(t) = elapsed_of(p)? {
            timings.push(("bnn_epistemic".into(), t));
        }
    }
    let level = ctx.cfg.inference.level;
    let report = analysis::compare(&sources, a.truth, &timings, level).stage(Stage::Inference)?;

    let mut class_curves = Vec::new();
    let mut classification = None;
    if let Some(p) = a.classification {
        meta::require(p, "create it with `plume infer` on a classification model")?;
        let axes = fio::read_probabilities(p).stage(Stage::Config)?;
        let mut ex = [0.0; 2];
        for (k, (axis, mids, probs)) in axes.iter().enumerate().take(2) {
            let width = if mids.len() > 1 { mids[1] - mids[0] } else { 1.0 };
            let bins = plume_core::nn::BinGrid { lo: mids[0] - 0.5 * width, hi: mids[mids.len() - 1] + 0.5 * width, n: mids.len() };
            ex[k] = binned_expectation(probs, &bins);
            let d = analysis::from_bin_probabilities(probs, &bins).stage(Stage::Config)?.with_source("classification");
            class_curves.push((axis.clone(), d));
        }
        classification = Some(ClassificationSummary { expected_x_c: ex[0], expected_y_c: ex[1] });
    }

    if let Some(dir) = a.plots {
        fs::create_dir_all(dir).stage(Stage::Other)?;
        let mut curves: Vec<(String, DensityEstimate)> = Vec::new();
        for (j, name) in analysis::PARAM_NAMES.iter().enumerate() {
            let cols: Vec<Vec<f64>> = sources.iter().map(|(_, s)| s.iter().map(|r| r[j]).collect()).collect();
            let grid = common_grid(&cols)?;
            for ((tag, _), col) in sources.iter().zip(&cols) {
                let d = analysis::gaussian_kde(col, Bandwidth::Silverman, Some(&grid)).stage(Stage::Inference)?;
                curves.push((name.to_string(), d.with_source(tag)));
            }
        }
        curves.extend(class_curves);
        fio::write_density_csv(&dir.join("marginals.csv"), &curves).stage(Stage::Other)?;
        let xs = chain.column(0, burn_in);
        let ys = chain.column(1, burn_in);
        let jh = analysis::joint_histogram(&xs, &ys, 50, 50).stage(Stage::Inference)?;
        write_joint(&dir.join("joint_dram.csv"), &jh)?;
    }

    let out = CompareOutput { report, burn_in, classification };
    ensure_parent(a.out)?;
    fio::write_json(a.out, &out).stage(Stage::Other)?;
    Ok(out)
}

/// Shared KDE grid covering every source at its own Silverman bandwidth.
fn common_grid(cols: &[Vec<f64>]) -> Result<Vec<f64>, Failure> {
    let (mut lo, mut hi, mut h_min) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for c in cols {
        let h = analysis::silverman_bandwidth(c).stage(Stage::Inference)?;
        let g = analysis::kde_grid(c, h);
        lo = lo.min(g[0]);
        hi = hi.max(g[g.len() - 1]);
        h_min = h_min.min(h);
    }
    let n = (((hi - lo) / (0.25 * h_min)).ceil() as usize + 1).clamp(512, 20_001);
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

fn write_joint(path: &Path, jh: &analysis::JointHistogram) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::new(Stage::Other, e.to_string()))?;
    let nx = jh.x_edges.len() - 1;
    let io_err = |e: csv::Error| Failure::new(Stage::Other, e.to_string());
    w.write_record(["x_lo", "x_hi", "y_lo", "y_hi", "density"]).map_err(io_err)?;
    for j in 0..jh.y_edges.len() - 1 {
        for i in 0..nx {
            w.write_record([
                jh.x_edges[i].to_string(),
                jh.x_edges[i + 1].to_string(),
                jh.y_edges[j].to_string(),
                jh.y_edges[j + 1].to_string(),
                jh.density[j * nx + i].to_string(),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().stage(Stage::Other)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceReport {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub truth: Scenario,
    pub regression: [f64; 3],
    pub classification: ClassificationSummary,
    pub dram: PosteriorSummary,
    pub comparison: CompareOutput,
}

/// Full comparison on the configured reference release.
pub fn reproduce_reference(ctx: &Ctx, models: &Path, train_missing: bool, out: &Path) -> Result<ReferenceReport, Failure> {
    fs::create_dir_all(out).stage(Stage::Other)?;
    let kinds = [
        (ModelKind::Regression, "regression.json"),
        (ModelKind::Classification, "classification.json"),
        (ModelKind::Bnn, "bnn.json"),
    ];
    let missing: Vec<_> = kinds.iter().filter(|(_, f)| !models.join(f).is_file()).collect();
    if !missing.is_empty() {
        if !train_missing {
            let (k, f) = missing[0];
            let kind = format!("{k:?}").to_lowercase();
            return Err(Failure::new(
                Stage::Config,
                format!(
                    "model file {} not found; train it with `plume train --model {kind} --data data.train.csv --out {}` or pass --train",
                    models.join(f).display(),
                    models.join(f).display()
                ),
            ));
        }
        fs::create_dir_all(models).stage(Stage::Other)?;
        let data = models.join("data.csv");
        if !split_path(&data, "train").is_file() {
            gen_data(ctx, ctx.cfg.data.count, &data, true)?;
        }
        for (k, f) in missing {
            train(ctx, *k, &split_path(&data, "train"), Some(&split_path(&data, "val")), &models.join(f))?;
        }
    }
    let s = ctx.cfg.inference.scenario;
    let mpath = out.join("measurements.csv");
    simulate(ctx, &s, &mpath)?;
    let n = ctx.cfg.inference.samples;

    let reg_out = out.join("regression.csv");
    infer(ctx, &models.join("regression.json"), &mpath, Mode::Combined, n, None, &reg_out)?;
    let regression = fio::read_samples(&reg_out).stage(Stage::Other)?[0];
    let probs = out.join("probs.csv");
    infer(ctx, &models.join("classification.json"), &mpath, Mode::Combined, n, None, &probs)?;
    let epi = out.join("samples_epistemic.csv");
    infer(ctx, &models.join("bnn.json"), &mpath, Mode::Epistemic, n, None, &epi)?;
    let comb = out.join("samples_combined.csv");
    infer(ctx, &models.join("bnn.json"), &mpath, Mode::Combined, n, None, &comb)?;
    let chain = out.join("chain.csv");
    let d = run_dram(ctx, &mpath, None, &chain)?;
    let comparison = compare(
        ctx,
        &CompareInputs {
            dram: &chain,
            bnn: &comb,
            bnn_epistemic: Some(&epi),
            classification: Some(&probs),
            truth: Some([s.x_c, s.y_c, s.m_c]),
            burn_in: None,
            out: &out.join("report.json"),
            plots: Some(&out.join("plots")),
        },
    )?;
    let report = ReferenceReport {
        version: REPORT_VERSION,
        seed: ctx.cfg.seed,
        config_hash: ctx.hash.clone(),
        truth: s,
        regression,
        classification: comparison.classification.clone().expect("classification given"),
        dram: d.summary,
        comparison,
    };
    fio::write_json(&out.join("reference.json"), &report).stage(Stage::Other)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub path: String,
    pub sha256: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub files: Vec<ManifestEntry>,
    /// Stage that aborted the run, if any; earlier outputs are kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
}

/// gen-data, three trainings, evaluation, then BNN and DRAM inference on
/// the reference release. Writes `manifest.json` even when a stage fails.
pub fn pipeline(ctx: &Ctx, out: &Path) -> Result<Manifest, Failure> {
    fs::create_dir_all(out).stage(Stage::Other)?;
    let mut manifest = Manifest {
        version: REPORT_VERSION,
        seed: ctx.cfg.seed,
        config_hash: ctx.hash.clone(),
        files: vec![],
        failed_stage: None,
    };
    let result = pipeline_stages(ctx, out, &mut manifest);
    if let Err(f) = &result {
        manifest.failed_stage = Some(f.message.split(':').next().unwrap_or_default().to_string());
    }
    fio::write_json(&out.join("manifest.json"), &manifest).stage(Stage::Other)?;
    result.map(|_| manifest)
}

fn pipeline_stages(ctx: &Ctx, out: &Path, manifest: &mut Manifest) -> Result<(), Failure> {
    let seed = ctx.cfg.seed;
    let mut record = |stage: &str, p: &Path| -> Result<(), Failure> {
        manifest.files.push(ManifestEntry {
            stage: stage.into(),
            path: file_name(p),
            sha256: meta::sha256_file(p)?,
            seed,
        });
        Ok(())
    };
    let stage = |name: &'static str| move |f: Failure| f.context(name);

    let data = out.join("data.csv");
    for p in gen_data(ctx, ctx.cfg.data.count, &data, true).map_err(stage("gen-data"))? {
        record("gen-data", &p)?;
    }
    let (tr, va, te) = (split_path(&data, "train"), split_path(&data, "val"), split_path(&data, "test"));
    let models = [
        (ModelKind::Regression, "regression"),
        (ModelKind::Classification, "classification"),
        (ModelKind::Bnn, "bnn"),
    ];
    for (kind, name) in models {
        let p = out.join(format!("{name}.json"));
        train(ctx, kind, &tr, Some(&va), &p).map_err(stage("train"))?;
        record("train", &p)?;
    }
    for (_, name) in models {
        let p = out.join(format!("eval_{name}.json"));
        let repeats = if name == "bnn" { 10 } else { 1 };
        evaluate(ctx, &out.join(format!("{name}.json")), &te, &p, false, repeats).map_err(stage("evaluate"))?;
        record("evaluate", &p)?;
    }
    let s = ctx.cfg.inference.scenario;
    let m = out.join("measurements.csv");
    simulate(ctx, &s, &m).map_err(stage("simulate"))?;
    record("simulate", &m)?;
    let n = ctx.cfg.inference.samples;
    let bnn = out.join("bnn.json");
    for (mode, file) in [(Mode::Epistemic, "samples_epistemic.csv"), (Mode::Combined, "samples_combined.csv")] {
        let p = out.join(file);
        infer(ctx, &bnn, &m, mode, n, None, &p).map_err(stage("infer"))?;
        record("infer", &p)?;
    }
    let probs = out.join("probs.csv");
    infer(ctx, &out.join("classification.json"), &m, Mode::Combined, n, None, &probs).map_err(stage("infer"))?;
    record("infer", &probs)?;
    let chain = out.join("chain.csv");
    run_dram(ctx, &m, None, &chain).map_err(stage("dram"))?;
    record("dram", &chain)?;
    Ok(())
}
