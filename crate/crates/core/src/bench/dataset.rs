use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which column of a CSV file holds the regression target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetColumn {
    /// Zero-based index; negative values count from the end (`-1` is last).
    Index(i64),
    /// Header name.
    Name(String),
}

impl Default for TargetColumn {
    fn default() -> Self {
        TargetColumn::Index(-1)
    }
}

/// Per-feature and target standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub x_mean: Vec<f64>,
    /// Zero-variance columns are stored with std 1 so they map to 0.
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    // relative threshold so that constant columns with rounding noise count as constant
    let std = if std <= 1e-12 * mean.abs().max(1.0) { 1.0 } else { std };
    (mean, std)
}

impl NormStats {
    pub fn fit(data: &RegressionDataset) -> Self {
        let (x_mean, x_std) = data.x.column_iter().map(|c| mean_std(c.iter().copied())).unzip();
        let (y_mean, y_std) = mean_std(data.y.iter().copied());
        Self {
            x_mean,
            x_std,
            y_mean,
            y_std,
        }
    }

    pub fn denormalize_y(&self, y: f64) -> f64 {
        y * self.y_std + self.y_mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    pub name: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Observation-noise variance in standardized target units.
    pub sigma_eps_sq: f64,
    norm: Option<NormStats>,
}

impl RegressionDataset {
    pub fn new(name: impl Into<String>, x: DMatrix<f64>, y: DVector<f64>, sigma_eps_sq: f64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset rows vs targets",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if x.nrows() < 2 {
            return Err(Error::invalid("a dataset needs at least two rows"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset".into()));
        }
        if !(sigma_eps_sq > 0.0 && sigma_eps_sq.is_finite()) {
            return Err(Error::invalid(format!(
                "noise variance must be positive, got {sigma_eps_sq}"
            )));
        }
        Ok(Self {
            name: name.into(),
            x,
            y,
            sigma_eps_sq,
            norm: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    pub fn is_normalized(&self) -> bool {
        self.norm.is_some()
    }

    /// Standardizes with statistics of this dataset.
    pub fn normalize(&self) -> Result<Self> {
        let stats = NormStats::fit(self);
        self.normalized_with(&stats)
    }

    /// Standardizes with externally fitted statistics (e.g. from a training split).
    pub fn normalized_with(&self, stats: &NormStats) -> Result<Self> {
        if self.norm.is_some() {
            return Err(Error::invalid(format!("dataset `{}` is already normalized", self.name)));
        }
        if stats.x_mean.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                context: "normalization statistics",
                expected: self.n_features(),
                found: stats.x_mean.len(),
            });
        }
        let mut x = self.x.clone();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - stats.x_mean[j]) / stats.x_std[j]);
        }
        let y = self.y.map(|v| (v - stats.y_mean) / stats.y_std);
        Ok(Self {
            name: self.name.clone(),
            x,
            y,
            sigma_eps_sq: self.sigma_eps_sq,
            norm: Some(stats.clone()),
        })
    }

    /// Undoes target standardization.
    pub fn denormalize_targets(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.norm {
            Some(s) => y.map(|v| s.denormalize_y(v)),
            None => y.clone(),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Self {
            name: self.name.clone(),
            x,
            y,
            sigma_eps_sq: self.sigma_eps_sq,
            norm: self.norm.clone(),
        }
    }
}

/// Row indices of a seeded random train/test partition.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::invalid("cannot split fewer than two rows"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split(
    data: &RegressionDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(RegressionDataset, RegressionDataset)> {
    let (train, test) = split_indices(data.len(), train_fraction, seed)?;
    Ok((data.select(&train), data.select(&test)))
}

/// Reads a numeric CSV; a first row containing any non-numeric cell is
/// treated as a header.
pub fn load_csv(path: &Path, target: &TargetColumn, sigma_eps_sq: f64) -> Result<RegressionDataset> {
    load_csv_with(path, target, sigma_eps_sq, b',')
}

pub fn load_csv_with(
    path: &Path,
    target: &TargetColumn,
    sigma_eps_sq: f64,
    delimiter: u8,
) -> Result<RegressionDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = reader.records();
    let parse_err = |row: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };

    let first = match records.next() {
        Some(r) => r?,
        None => return Err(parse_err(1, 0, "file is empty".into())),
    };
    let first: Vec<String> = first.iter().map(str::to_string).collect();
    let header = first.iter().any(|c| c.parse::<f64>().is_err());
    let ncols = first.len();

    let target_idx = match target {
        TargetColumn::Index(i) => {
            let idx = if *i < 0 { ncols as i64 + i } else { *i };
            if idx < 0 || idx as usize >= ncols {
                return Err(Error::invalid(format!(
                    "target column {i} out of range for {ncols} columns"
                )));
            }
            idx as usize
        }
        TargetColumn::Name(name) => {
            if !header {
                return Err(Error::invalid(format!(
                    "target column `{name}` requested but the file has no header"
                )));
            }
            first
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::invalid(format!("target column `{name}` not found")))?
        }
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut push_row = |cells: Vec<String>, row_no: usize| -> Result<()> {
        if cells.len() != ncols {
            return Err(parse_err(
                row_no,
                cells.len(),
                format!("expected {ncols} columns, found {}", cells.len()),
            ));
        }
        let mut vals = Vec::with_capacity(ncols);
        for (col, cell) in cells.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => vals.push(v),
                Ok(_) => return Err(parse_err(row_no, col + 1, format!("non-finite value `{cell}`"))),
                Err(_) => return Err(parse_err(row_no, col + 1, format!("non-numeric value `{cell}`"))),
            }
        }
        rows.push(vals);
        Ok(())
    };
    if !header {
        push_row(first.clone(), 1)?;
    }
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        push_row(rec.iter().map(str::to_string).collect(), i + 2)?;
    }

    let n = rows.len();
    let x = DMatrix::from_fn(n, ncols - 1, |i, j| rows[i][if j < target_idx { j } else { j + 1 }]);
    let y = DVector::from_fn(n, |i, _| rows[i][target_idx]);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RegressionDataset::new(name, x, y, sigma_eps_sq)
}

/// `y = sin(x_1) + 0.5 x_2 ... + noise`, inputs uniform on `[-2, 2]^D`.
pub fn synthetic_dataset(n: usize, d: usize, noise_var: f64, seed: u64) -> Result<RegressionDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0f64..2.0));
    let normal = rand_distr::Normal::new(0.0, noise_var.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let y = DVector::from_fn(n, |i, _| {
        let signal = x[(i, 0)].sin() + x.row(i).iter().skip(1).map(|v| 0.5 * v).sum::<f64>();
        signal + rng.sample(normal)
    });
    RegressionDataset::new("synthetic", x, y, noise_var)
}
