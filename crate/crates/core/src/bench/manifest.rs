use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{load_csv_with, RegressionDataset, TargetColumn};
use crate::error::{Error, Result};

/// Published size and standardized noise variance of the benchmark datasets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownDataset {
    pub name: &'static str,
    pub n: usize,
    pub d: usize,
    pub sigma_eps_sq: f64,
}

pub const KNOWN_DATASETS: [KnownDataset; 10] = [
    KnownDataset {
        name: "boston",
        n: 506,
        d: 13,
        sigma_eps_sq: 0.08,
    },
    KnownDataset {
        name: "concrete",
        n: 1030,
        d: 8,
        sigma_eps_sq: 0.05,
    },
    KnownDataset {
        name: "energy",
        n: 768,
        d: 8,
        sigma_eps_sq: 1e-7,
    },
    KnownDataset {
        name: "kin8nm",
        n: 8192,
        d: 8,
        sigma_eps_sq: 0.02,
    },
    KnownDataset {
        name: "naval",
        n: 11934,
        d: 16,
        sigma_eps_sq: 1e-7,
    },
    KnownDataset {
        name: "power",
        n: 9568,
        d: 4,
        sigma_eps_sq: 0.05,
    },
    KnownDataset {
        name: "protein",
        n: 45730,
        d: 9,
        sigma_eps_sq: 0.5,
    },
    KnownDataset {
        name: "wine",
        n: 1599,
        d: 11,
        sigma_eps_sq: 0.5,
    },
    KnownDataset {
        name: "yacht",
        n: 308,
        d: 6,
        sigma_eps_sq: 1e-7,
    },
    KnownDataset {
        name: "song",
        n: 515345,
        d: 90,
        sigma_eps_sq: 0.7,
    },
];

pub fn known_dataset(name: &str) -> Option<&'static KnownDataset> {
    KNOWN_DATASETS.iter().find(|k| k.name.eq_ignore_ascii_case(name))
}

/// One `[datasets.<name>]` table of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub target: TargetColumn,
    /// Falls back to the built-in table for known dataset names.
    pub sigma_eps_sq: Option<f64>,
    /// Single-byte field delimiter, `,` by default.
    pub delimiter: Option<char>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut manifest: Self = toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn resolve(&self, name: &str) -> Result<PathBuf> {
        let entry = self.entry(name)?;
        Ok(self.base_dir.join(&entry.path))
    }

    fn entry(&self, name: &str) -> Result<&DatasetEntry> {
        self.datasets
            .get(name)
            .ok_or_else(|| Error::invalid(format!("dataset `{name}` is not listed in the manifest")))
    }

    pub fn open(&self, name: &str) -> Result<RegressionDataset> {
        let entry = self.entry(name)?;
        let noise = match (entry.sigma_eps_sq, known_dataset(name)) {
            (Some(v), _) => v,
            (None, Some(k)) => k.sigma_eps_sq,
            (None, None) => {
                return Err(Error::invalid(format!(
                    "dataset `{name}` needs sigma_eps_sq in the manifest"
                )))
            }
        };
        let delimiter = match entry.delimiter {
            None => b',',
            Some(c) if c.is_ascii() => c as u8,
            Some(c) => return Err(Error::invalid(format!("delimiter `{c}` is not a single byte"))),
        };
        let path = self.base_dir.join(&entry.path);
        if !path.exists() {
            return Err(Error::invalid(format!("file {} not found", path.display())));
        }
        let mut data = load_csv_with(&path, &entry.target, noise, delimiter)?;
        data.name = name.to_string();
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("d.csv"), "a;b;y\n1;2;3\n4;5;7\n").unwrap();
        fs::write(
            dir.path().join("m.toml"),
            "[datasets.toy]\npath = \"d.csv\"\ntarget = \"y\"\nsigma_eps_sq = 0.5\ndelimiter = \";\"\n\n[datasets.yacht]\npath = \"nope.csv\"\ntarget = -1\n",
        )
        .unwrap();
        let m = DatasetManifest::load(&dir.path().join("m.toml")).unwrap();
        let d = m.open("toy").unwrap();
        assert_eq!(d.name, "toy");
        assert_eq!(d.y.as_slice(), &[3.0, 7.0]);
        assert_eq!(d.sigma_eps_sq, 0.5);
        assert!(m.open("yacht").is_err());
        assert!(m.open("missing").is_err());
        assert_eq!(known_dataset("Yacht").unwrap().sigma_eps_sq, 1e-7);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("m.toml"), "[datasets.x]\npath = \"a\"\ntargett = 1\n").unwrap();
        assert!(DatasetManifest::load(&dir.path().join("m.toml")).is_err());
    }
}
