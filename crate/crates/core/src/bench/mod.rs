//! Dataset loading, scoring and the regression benchmark protocol.

mod dataset;
mod manifest;
mod metrics;
mod protocol;
mod theorem1;

pub use dataset::{
    load_csv, load_csv_with, split, split_indices, synthetic_dataset, NormStats, RegressionDataset, TargetColumn,
};
pub use manifest::{known_dataset, DatasetEntry, DatasetManifest, KnownDataset, KNOWN_DATASETS};
pub use metrics::{gaussian_nll, rmse, MetricReport, SplitMetrics};
pub use protocol::{run_benchmark, BenchConfig, BenchOutcome, SplitRecord};
pub use theorem1::{is_decreasing, random_features, theorem1_check, trace_ratio, Theorem1Row};
