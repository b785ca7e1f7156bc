//! Metadata sidecars and file hashing.

use std::io::Read;
use std::path::Path;

use plume_core::datagen::SimulationSetup;
use plume_core::sensing::PhysicsConstants;
use plume_core::transport::{GridConfig, Scenario};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::fail::{Failure, Stage, StageExt};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub artifact: String,
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
}

impl Header {
    pub fn new(artifact: &str, seed: u64, config_hash: &str) -> Self {
        Self { artifact: artifact.into(), version: ARTIFACT_VERSION, seed, config_hash: config_hash.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(flatten)]
    pub header: Header,
    pub rows: usize,
    pub split: String,
    pub setup: SimulationSetup,
}

/// Everything needed to interpret a measurement file besides the counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementMeta {
    #[serde(flatten)]
    pub header: Header,
    pub t_obs: f64,
    pub u: f64,
    pub v: f64,
    pub k_x: f64,
    pub k_y: f64,
    pub physics: PhysicsConstants,
    pub grid: GridConfig,
    /// The release that produced the counts, when known.
    pub scenario: Option<Scenario>,
}

impl MeasurementMeta {
    /// Ambient conditions as a scenario with a placeholder release.
    pub fn conditions(&self) -> Scenario {
        Scenario { x_c: 0.0, y_c: 0.0, m_c: 0.0, u: self.u, v: self.v, k_x: self.k_x, k_y: self.k_y, t_obs: self.t_obs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputMeta {
    #[serde(flatten)]
    pub header: Header,
    pub inputs: Vec<String>,
    /// Wall-clock seconds spent producing the file. Not part of any hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

pub fn write<T: Serialize>(data_path: &Path, meta: &T) -> Result<(), Failure> {
    plume_core::io::write_sidecar(data_path, meta).stage(Stage::Other)
}

pub fn read<T: for<'de> Deserialize<'de>>(data_path: &Path) -> Result<Option<T>, Failure> {
    plume_core::io::read_sidecar(data_path).stage(Stage::Config)
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let mut f = std::fs::File::open(path)
        .map_err(|e| Failure::new(Stage::Other, format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).stage(Stage::Other)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

/// Fails with a configuration error when an input file is missing.
pub fn require(path: &Path, hint: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else if hint.is_empty() {
        Err(Failure::new(Stage::Config, format!("input file {} does not exist", path.display())))
    } else {
        Err(Failure::new(Stage::Config, format!("input file {} does not exist; {hint}", path.display())))
    }
}
