//! Run manifest: the deterministic record written at the end of a run.
//!
//! The manifest carries everything needed to replay the run bit-for-bit
//! (config snapshot, seed, format version) plus the resulting metrics.
//! Wall-clock duration goes to a `timing.txt` sidecar so two identical
//! runs produce byte-identical manifests.

use crate::config::RunConfig;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use tljd_core::MetricsReport;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub train: MetricsReport,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config: RunConfig,
    /// Checkpoint file name, relative to the manifest's directory.
    pub checkpoint: String,
    pub model_descriptor: String,
    pub training_log: String,
    pub best_epoch: usize,
    pub metrics: SplitMetrics,
}

impl RunManifest {
    /// Serialize deterministically and write atomically.
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).context("serializing manifest")?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json.as_bytes())
            .with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// Record the wall-clock duration next to the manifest.
pub fn write_timing(dir: &Path, seconds: f64) -> Result<()> {
    std::fs::write(dir.join("timing.txt"), format!("wall_clock_seconds = {seconds:.3}\n"))
        .context("writing timing.txt")?;
    Ok(())
}
