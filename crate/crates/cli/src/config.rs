//! Run configuration. Every key is optional in the TOML file; missing keys
//! take the desk-scale defaults below.

use std::path::Path;

use plume_core::bnn::{BnnConfig, NoiseModel};
use plume_core::datagen::SimulationSetup;
use plume_core::dram::DramConfig;
use plume_core::nn::{NadamConfig, TrainConfig};
use plume_core::transport::{GridConfig, Scenario};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fail::{Failure, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub setup: SimulationSetup,
    pub regression: TrainerConfig,
    pub classification: TrainerConfig,
    pub bnn: BnnTrainerConfig,
    pub dram: DramConfig,
    pub inference: InferenceConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub count: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BnnTrainerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub noise: NoiseModel,
    pub kl_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Posterior samples drawn from the BNN per density.
    pub samples: usize,
    pub level: f64,
    pub scenario: Scenario,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { count: 40_000, split: [0.5, 0.25, 0.25] }
    }
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 128, learning_rate: 1e-3 }
    }
}

impl Default for BnnTrainerConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 128, learning_rate: 1e-3, noise: NoiseModel::Learned, kl_scale: 1.0 }
    }
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { samples: 10_000, level: 0.95, scenario: Scenario::reference() }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: DataConfig::default(),
            setup: SimulationSetup::default(),
            regression: TrainerConfig::default(),
            classification: TrainerConfig::default(),
            bnn: BnnTrainerConfig::default(),
            dram: DramConfig::default(),
            inference: InferenceConfig::default(),
        }
    }
}

impl RunConfig {
    /// 400k rows, the 1001-point grid and the full epoch counts.
    pub fn paper_scale() -> Self {
        let mut c = Self::default();
        c.data.count = 400_000;
        c.setup.grid = GridConfig::PAPER_SCALE;
        c.regression.epochs = 500;
        c.classification.epochs = 1000;
        c.bnn.epochs = 500;
        c
    }

    pub fn load(path: &Path, paper_scale: bool) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(Stage::Config, format!("cannot read config {}: {e}", path.display())))?;
        let base = if paper_scale { Self::paper_scale() } else { Self::default() };
        let mut merged = toml::Table::try_from(&base).map_err(|e| Failure::new(Stage::Config, e.to_string()))?;
        let user: toml::Table = text
            .parse()
            .map_err(|e| Failure::new(Stage::Config, format!("{}: {e}", path.display())))?;
        merge(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| Failure::new(Stage::Config, format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let cfg = |e: plume_core::Error| Failure::new(Stage::Config, e.to_string());
        self.setup.validate().map_err(cfg)?;
        self.dram.validate().map_err(cfg)?;
        self.bnn_config().validate().map_err(cfg)?;
        self.regression_config().validate().map_err(cfg)?;
        self.classification_config().validate().map_err(cfg)?;
        self.inference.scenario.validate().map_err(cfg)?;
        if self.data.count == 0 {
            return Err(Failure::new(Stage::Config, "data.count must be at least 1"));
        }
        if self.inference.samples == 0 {
            return Err(Failure::new(Stage::Config, "inference.samples must be at least 1"));
        }
        if !(self.inference.level > 0.0 && self.inference.level < 1.0) {
            return Err(Failure::new(Stage::Config, "inference.level must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn regression_config(&self) -> TrainConfig {
        trainer(TrainConfig::regression(), &self.regression, self.seed)
    }

    pub fn classification_config(&self) -> TrainConfig {
        trainer(TrainConfig::classification(), &self.classification, self.seed)
    }

    pub fn bnn_config(&self) -> BnnConfig {
        let b = &self.bnn;
        BnnConfig {
            epochs: b.epochs,
            batch_size: b.batch_size,
            seed: self.seed,
            optimizer: NadamConfig { learning_rate: b.learning_rate, ..NadamConfig::default() },
            noise: b.noise,
            kl_scale: b.kl_scale,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

fn trainer(base: TrainConfig, t: &TrainerConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        seed,
        optimizer: NadamConfig { learning_rate: t.learning_rate, ..base.optimizer },
        ..base
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
