use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelKind};
use super::train::TrainReport;
use crate::clustering::DriverClass;
use crate::error::{Error, Result};

/// One trained model file and the cell it was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the manifest.
    pub file: String,
    pub model: ModelKind,
    /// `None` for the pooled model trained on every vehicle.
    pub class: Option<DriverClass>,
    pub horizon_m: usize,
    pub env: bool,
    pub seed: u64,
    /// Index of the seed replicate this model belongs to.
    #[serde(default)]
    pub replicate: usize,
    pub best_val_mae: f64,
    pub epochs: usize,
    pub config: ModelConfig,
}

impl ManifestEntry {
    pub fn new(file: String, class: Option<DriverClass>, config: &ModelConfig, report: &TrainReport) -> Self {
        ManifestEntry {
            file,
            model: config.kind,
            class,
            horizon_m: config.horizon,
            env: config.use_env,
            seed: config.seed,
            replicate: 0,
            best_val_mae: report.best_val_mae,
            epochs: report.epochs,
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub models: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
