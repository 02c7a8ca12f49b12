//! Run configuration: one JSON document describes a whole run.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use tljd_core::dataset::{generate_synthetic, load_table, IndicatorTable, Protocol, SynthConfig};
use tljd_core::model::{Ablation, TargetTransform};
use tljd_core::train::TrainConfig;

/// Paths of an on-disk dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataPaths {
    pub data: PathBuf,
    pub schema: PathBuf,
}

/// Everything needed to reproduce a run: training hyperparameters, the
/// protocol, and exactly one data source (files or a synthetic block).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_ablation")]
    pub ablation: Ablation,
    #[serde(default = "default_transform")]
    pub target_transform: TargetTransform,
    pub protocol: Protocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthConfig>,
}

fn default_ablation() -> Ablation {
    Ablation::Full
}

fn default_transform() -> TargetTransform {
    TargetTransform::None
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => bail!("config must give exactly one data source, found both"),
            (None, None) => bail!("config must give a data source: 'data' paths or a 'synthetic' block"),
            (Some(paths), None) => {
                for (what, p) in [("data", &paths.data), ("schema", &paths.schema)] {
                    if !p.exists() {
                        bail!("{what} file {} does not exist", p.display());
                    }
                }
            }
            (None, Some(_)) => {}
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            d: self.d,
            layers: self.layers,
            heads: self.heads,
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            ablation: self.ablation,
            target_transform: self.target_transform,
        }
    }

    /// Materialize the table from whichever source the config names.
    pub fn resolve_table(&self) -> Result<IndicatorTable> {
        match (&self.data, &self.synthetic) {
            (Some(paths), None) => Ok(load_table(&paths.data, &paths.schema)?),
            (None, Some(synth)) => Ok(generate_synthetic(synth)?.0),
            _ => bail!("config must give exactly one data source"),
        }
    }
}
