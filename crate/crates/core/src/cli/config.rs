use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::BenchConfig;
use crate::diagnostics::{GradcheckConfig, OracleConfig, Theorem1Config};
use crate::error::{Error, Result};
use crate::toy::ToyConfig;

pub const DEFAULT_OUT_DIR: &str = "anchored-out";
pub const DEFAULT_MANIFEST: &str = "data/manifest.toml";

/// Contents of the `--config` file. Every field is optional; command-line
/// flags take precedence over the file, which takes precedence over defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub oracle: OracleConfig,
    pub toy: ToyConfig,
    pub benchmark: BenchmarkSection,
    pub gradcheck: GradcheckConfig,
    pub theorem1: Theorem1Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSection {
    /// Dataset manifest; relative paths resolve against the working directory.
    pub manifest: PathBuf,
    pub datasets: Vec<String>,
    #[serde(flatten)]
    pub protocol: BenchConfig,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from(DEFAULT_MANIFEST),
            datasets: Vec::new(),
            protocol: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Hex SHA-256 of the JSON encoding of an effective configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str(
            "seed = 7\n[toy]\nactivation = \"rbf\"\nhidden_width = 20\n[toy.train]\nepochs = 10\n[benchmark]\ndatasets = [\"boston\"]\nmembers = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.toy.activation, Activation::Rbf);
        assert_eq!(cfg.toy.members, 10);
        assert_eq!(cfg.toy.train.epochs, 10);
        assert_eq!(cfg.toy.train.learning_rate, 0.01);
        assert_eq!(cfg.benchmark.protocol.members, 3);
        assert_eq!(cfg.benchmark.protocol.splits, 5);
        assert_eq!(cfg.benchmark.manifest, PathBuf::from(DEFAULT_MANIFEST));
    }

    #[test]
    fn typos_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("[toy]\nactivation = \"tanh\"\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = config_hash(&ToyConfig::default()).unwrap();
        assert_eq!(a, config_hash(&ToyConfig::default()).unwrap());
        let b = config_hash(&ToyConfig {
            seed: 1,
            ..ToyConfig::default()
        })
        .unwrap();
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
    }
}
