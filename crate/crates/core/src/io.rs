//! File formats: CSV tables with JSON metadata sidecars, and versioned JSON
//! model files with base64 parameter blocks.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::DensityEstimate;
use crate::bnn::{DensityKind, NoiseModel, PosteriorSampleSet, VariationalMlp};
use crate::datagen::{ColumnScaler, Dataset, Normalizer, Sample, SplitTag};
use crate::dram::{Chain, ChainState, Stage};
use crate::error::{Error, Result};
use crate::nn::{Architecture, BinGrid, ClassificationModel, Mlp, RegressionModel, TrainConfig};
use crate::sensing::{DetectorSpec, MeasurementVector};

pub const FORMAT_VERSION: u32 = 1;

/// `data.csv` -> `data.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_sidecar<T: Serialize>(data_path: &Path, meta: &T) -> Result<()> {
    write_json(&sidecar_path(data_path), meta)
}

pub fn read_sidecar<T: DeserializeOwned>(data_path: &Path) -> Result<Option<T>> {
    let p = sidecar_path(data_path);
    if p.exists() {
        Ok(Some(read_json(&p)?))
    } else {
        Ok(None)
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::Reader::from_path(path)?)
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str, line: usize) -> Result<T> {
    field
        .and_then(|f| f.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("row {line}: bad or missing {what}")))
}

fn check_header(r: &mut csv::Reader<File>, expected: &[String], path: &Path) -> Result<()> {
    let h: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if h != expected {
        return Err(Error::Format(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            expected.join(","),
            h.join(",")
        )));
    }
    Ok(())
}

pub fn dataset_header(n_detectors: usize) -> Vec<String> {
    let mut h = vec!["u".to_string(), "v".to_string()];
    h.extend((1..=n_detectors).map(|i| format!("d{i}")));
    h.extend(["x_c", "y_c", "m_c"].map(String::from));
    h
}

/// Raw counts, one release per row: `u,v,d1..dN,x_c,y_c,m_c`.
pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(dataset_header(d.n_detectors))?;
    for s in &d.rows {
        let mut rec = vec![s.u.to_string(), s.v.to_string()];
        rec.extend(s.counts.iter().map(u64::to_string));
        rec.extend([s.x_c, s.y_c, s.m_c].map(|v| v.to_string()));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path, seed: u64) -> Result<Dataset> {
    let mut r = reader(path)?;
    let n_cols = r.headers()?.len();
    if n_cols < 6 {
        return Err(Error::Format(format!("{}: too few columns for a dataset", path.display())));
    }
    let n_det = n_cols - 5;
    check_header(&mut r, &dataset_header(n_det), path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let counts = (0..n_det)
            .map(|k| parse::<u64>(rec.get(2 + k), "count", line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Sample {
            u: parse(rec.get(0), "u", line)?,
            v: parse(rec.get(1), "v", line)?,
            counts,
            x_c: parse(rec.get(2 + n_det), "x_c", line)?,
            y_c: parse(rec.get(3 + n_det), "y_c", line)?,
            m_c: parse(rec.get(4 + n_det), "m_c", line)?,
        });
    }
    Ok(Dataset { rows, n_detectors: n_det, seed, split: SplitTag::Full })
}

/// `detector_id,x,y,counts`.
pub fn write_measurements(path: &Path, m: &MeasurementVector, detectors: &[DetectorSpec]) -> Result<()> {
    if detectors.len() != m.len() {
        return Err(Error::Structural(format!("{} counts for {} detectors", m.len(), detectors.len())));
    }
    let mut w = writer(path)?;
    w.write_record(["detector_id", "x", "y", "counts"])?;
    for ((id, c), d) in m.detector_ids.iter().zip(&m.counts).zip(detectors) {
        w.write_record([id.to_string(), d.position.0.to_string(), d.position.1.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Counts and detector positions, in file order.
pub fn read_measurements(path: &Path, t_obs: f64) -> Result<(MeasurementVector, Vec<(f64, f64)>)> {
    let mut r = reader(path)?;
    check_header(&mut r, &["detector_id", "x", "y", "counts"].map(String::from), path)?;
    let (mut ids, mut counts, mut pos) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        ids.push(parse(rec.get(0), "detector_id", line)?);
        pos.push((parse(rec.get(1), "x", line)?, parse(rec.get(2), "y", line)?));
        counts.push(parse(rec.get(3), "counts", line)?);
    }
    Ok((MeasurementVector { detector_ids: ids, counts, t_obs }, pos))
}

pub fn write_chain(path: &Path, c: &Chain) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iter", "x_c", "y_c", "m_c", "sigma2", "stage", "accepted"])?;
    for (i, s) in c.states.iter().enumerate() {
        w.write_record([
            i.to_string(),
            s.theta[0].to_string(),
            s.theta[1].to_string(),
            s.theta[2].to_string(),
            s.sigma2.to_string(),
            s.stage.code().to_string(),
            u8::from(s.accepted()).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a chain file. The initial point and `s0^2` are not part of the CSV
/// and come back as the first state and zero.
pub fn read_chain(path: &Path, seed: u64) -> Result<Chain> {
    let mut r = reader(path)?;
    check_header(&mut r, &["iter", "x_c", "y_c", "m_c", "sigma2", "stage", "accepted"].map(String::from), path)?;
    let mut states = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let code: u8 = parse(rec.get(5), "stage", line)?;
        let stage = Stage::from_code(code).ok_or_else(|| Error::Format(format!("row {line}: unknown stage {code}")))?;
        states.push(ChainState {
            theta: [parse(rec.get(1), "x_c", line)?, parse(rec.get(2), "y_c", line)?, parse(rec.get(3), "m_c", line)?],
            sigma2: parse(rec.get(4), "sigma2", line)?,
            stage,
        });
    }
    let initial = states.first().map(|s| s.theta).unwrap_or_default();
    Ok(Chain { states, seed, initial, s0_sq: 0.0 })
}

/// `x_c,y_c,m_c`, one posterior draw per row.
pub fn write_samples(path: &Path, s: &[[f64; 3]]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["x_c", "y_c", "m_c"])?;
    for row in s {
        w.write_record(row.map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<[f64; 3]>> {
    let mut r = reader(path)?;
    check_header(&mut r, &["x_c", "y_c", "m_c"].map(String::from), path)?;
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let line = i + 2;
            Ok([parse(rec.get(0), "x_c", line)?, parse(rec.get(1), "y_c", line)?, parse(rec.get(2), "m_c", line)?])
        })
        .collect()
}

pub fn read_sample_set(path: &Path) -> Result<PosteriorSampleSet> {
    let samples = read_samples(path)?;
    let meta: Option<serde_json::Value> = read_sidecar(path)?;
    let kind = meta
        .as_ref()
        .and_then(|m| m.get("kind"))
        .and_then(|k| serde_json::from_value(k.clone()).ok())
        .unwrap_or(DensityKind::Combined);
    let seed = meta.as_ref().and_then(|m| m.get("seed")).and_then(|s| s.as_u64()).unwrap_or(0);
    Ok(PosteriorSampleSet { samples, kind, seed })
}

/// Classification probabilities for one feature row: `axis,midpoint,probability`.
pub fn write_probabilities(path: &Path, probs: &[f64], x_bins: &BinGrid, y_bins: &BinGrid) -> Result<()> {
    if probs.len() != x_bins.n + y_bins.n {
        return Err(Error::Structural("probability vector does not match the bins".into()));
    }
    let mut w = writer(path)?;
    w.write_record(["axis", "midpoint", "probability"])?;
    for (axis, bins, block) in [("x_c", x_bins, &probs[..x_bins.n]), ("y_c", y_bins, &probs[x_bins.n..])] {
        for (j, p) in block.iter().enumerate() {
            w.write_record([axis.to_string(), bins.midpoint(j).to_string(), p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Probabilities per axis in file order, as `(axis, midpoints, probabilities)`.
pub fn read_probabilities(path: &Path) -> Result<Vec<(String, Vec<f64>, Vec<f64>)>> {
    let mut r = reader(path)?;
    check_header(&mut r, &["axis", "midpoint", "probability"].map(String::from), path)?;
    let mut out: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let axis = rec.get(0).unwrap_or_default().to_string();
        let mid: f64 = parse(rec.get(1), "midpoint", line)?;
        let p: f64 = parse(rec.get(2), "probability", line)?;
        match out.last_mut() {
            Some((a, m, ps)) if *a == axis => {
                m.push(mid);
                ps.push(p);
            }
            _ => out.push((axis, vec![mid], vec![p])),
        }
    }
    Ok(out)
}

/// Plot-ready densities: `param,grid,density,source`.
pub fn write_density_csv(path: &Path, curves: &[(String, DensityEstimate)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["param", "grid", "density", "source"])?;
    for (param, d) in curves {
        for (g, v) in d.grid.iter().zip(&d.density) {
            w.write_record([param.clone(), g.to_string(), v.to_string(), d.source.clone()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn encode_f64(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f64(s: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD.decode(s).map_err(|e| Error::Format(format!("{what}: {e}")))?;
    if bytes.len() != 8 * expected {
        return Err(Error::Format(format!(
            "{what}: expected {expected} values, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SavedModel {
    Regression {
        arch: Architecture,
        params: String,
        normalizer: Normalizer,
        train: TrainConfig,
    },
    Classification {
        arch: Architecture,
        params: String,
        features: ColumnScaler,
        x_bins: BinGrid,
        y_bins: BinGrid,
        train: TrainConfig,
    },
    Bnn {
        arch: Architecture,
        mu: String,
        rho: String,
        log_noise_var: Vec<f64>,
        noise: NoiseModel,
        normalizer: Normalizer,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub seed: u64,
    /// Free-form training provenance (config hash, data file, epochs).
    pub provenance: serde_json::Value,
    pub model: SavedModel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Regression(RegressionModel),
    Classification(ClassificationModel),
    Bnn(VariationalMlp),
}

impl LoadedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            LoadedModel::Regression(_) => "regression",
            LoadedModel::Classification(_) => "classification",
            LoadedModel::Bnn(_) => "bnn",
        }
    }
}

impl From<&RegressionModel> for SavedModel {
    fn from(m: &RegressionModel) -> Self {
        SavedModel::Regression {
            arch: m.mlp.arch.clone(),
            params: encode_f64(&m.mlp.params),
            normalizer: m.normalizer.clone(),
            train: m.train_config,
        }
    }
}

impl From<&ClassificationModel> for SavedModel {
    fn from(m: &ClassificationModel) -> Self {
        SavedModel::Classification {
            arch: m.mlp.arch.clone(),
            params: encode_f64(&m.mlp.params),
            features: m.features.clone(),
            x_bins: m.x_bins,
            y_bins: m.y_bins,
            train: m.train_config,
        }
    }
}

impl From<&VariationalMlp> for SavedModel {
    fn from(m: &VariationalMlp) -> Self {
        SavedModel::Bnn {
            arch: m.arch.clone(),
            mu: encode_f64(&m.mu),
            rho: encode_f64(&m.rho),
            log_noise_var: m.log_noise_var.clone(),
            noise: m.noise,
            normalizer: m.normalizer.clone(),
        }
    }
}

impl SavedModel {
    pub fn load(self) -> Result<LoadedModel> {
        Ok(match self {
            SavedModel::Regression { arch, params, normalizer, train } => {
                let params = decode_f64(&params, arch.n_params(), "params")?;
                LoadedModel::Regression(RegressionModel { mlp: Mlp::new(arch, params)?, normalizer, train_config: train })
            }
            SavedModel::Classification { arch, params, features, x_bins, y_bins, train } => {
                let params = decode_f64(&params, arch.n_params(), "params")?;
                LoadedModel::Classification(ClassificationModel {
                    mlp: Mlp::new(arch, params)?,
                    features,
                    x_bins,
                    y_bins,
                    train_config: train,
                })
            }
            SavedModel::Bnn { arch, mu, rho, log_noise_var, noise, normalizer } => {
                let n = arch.n_params();
                let m = VariationalMlp {
                    mu: decode_f64(&mu, n, "mu")?,
                    rho: decode_f64(&rho, n, "rho")?,
                    arch,
                    log_noise_var,
                    noise,
                    normalizer,
                };
                m.validate()?;
                LoadedModel::Bnn(m)
            }
        })
    }
}

pub fn write_model(path: &Path, model: SavedModel, seed: u64, provenance: serde_json::Value) -> Result<()> {
    write_json(path, &ModelFile { format_version: FORMAT_VERSION, seed, provenance, model })
}

pub fn read_model(path: &Path) -> Result<(ModelFile, LoadedModel)> {
    let f: ModelFile = read_json(path)?;
    if f.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: model format version {} is not supported (expected {FORMAT_VERSION})",
            path.display(),
            f.format_version
        )));
    }
    let loaded = f.model.clone().load()?;
    Ok((f, loaded))
}
