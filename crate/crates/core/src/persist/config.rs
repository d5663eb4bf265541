use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DomainDatasetSpec;
use crate::error::{Error, Result};
use crate::model::{NetworkSpec, PretrainConfig};
use crate::train::TrainConfig;

/// Everything a pipeline run needs. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data: DomainDatasetSpec,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Seed for adapter and head initialisation.
    #[serde(default)]
    pub adapter_seed: u64,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: default_data_dir(),
            out_dir: default_out_dir(),
            data: DomainDatasetSpec::default(),
            network: NetworkSpec::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            adapter_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    /// Reads `path` and resolves relative directories against its parent.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let root = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.data_dir = resolve(root, &cfg.data_dir);
        cfg.out_dir = resolve(root, &cfg.out_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Cross-checks the dataset against the network.
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        let (d, n) = (&self.data, &self.network);
        if d.num_domains != n.num_domains || d.num_classes != n.num_classes || d.input_dim != n.input_dim {
            return Err(Error::Config(format!(
                "data (D={}, C={}, input_dim={}) does not match network (D={}, C={}, input_dim={})",
                d.num_domains, d.num_classes, d.input_dim, n.num_domains, n.num_classes, n.input_dim
            )));
        }
        Ok(())
    }
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}
