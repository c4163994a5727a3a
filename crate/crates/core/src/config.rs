//! Run configuration file (TOML) shared by the CLI subcommands.
//!
//! Every table and key is optional; missing values take the defaults.
//!
//! ```toml
//! [system]
//! n_cells = 2
//! users_per_cell = 2
//!
//! [gp]
//! trust_factor = 2.0
//! objective = { kind = "smooth_capped", sharpness = 20.0 }
//!
//! [power_train]
//! epochs = 60
//!
//! [dataset]
//! power_topologies = 1250
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gp::GpConfig;
use crate::nncore::TrainConfig;
use crate::topo::SystemConfig;

/// Corpus sizes and seeds for dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Topologies whose every schedule becomes a power-network sample.
    pub power_topologies: usize,
    /// Topologies for the schedule-value network, one sample each.
    pub sched_topologies: usize,
    /// Fraction of topologies held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            power_topologies: 1250,
            sched_topologies: 2000,
            validation_fraction: 0.1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Seed of the first benchmark topology; topology `k` uses `seed + k`.
    pub seed: u64,
    /// Seed of the stream that picks schedules for the random method.
    pub random_seed: u64,
    /// Candidate count for the top-k method when the method list says `dqn-dnn-k`
    /// without a number.
    pub top_k: usize,
    /// Untimed runs per method before timing starts.
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 1_000_000,
            random_seed: 7,
            top_k: 5,
            warmup: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub gp: GpConfig,
    pub power_train: TrainConfig,
    pub sched_train: TrainConfig,
    pub dataset: DatasetConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.gp.validate()?;
        self.power_train.validate()?;
        self.sched_train.validate()?;
        let f = self.dataset.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction must lie in (0, 1), got {f}"
            )));
        }
        if self.bench.top_k == 0 {
            return Err(Error::InvalidConfig(
                "bench.top_k must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded. Two files that parse
    /// to the same configuration hash the same.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(hex(&Sha256::digest(&json)))
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Number of validation topologies out of `total` (at least one on each side
/// once `total >= 2`).
pub fn validation_count(total: usize, fraction: f64) -> usize {
    if total < 2 {
        return 0;
    }
    ((total as f64 * fraction).round() as usize).clamp(1, total - 1)
}
