//! Command-line front end. `main.rs` forwards to [`main_with_args`].

mod config;
mod report;

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{config_hash, BenchmarkSection, RunConfig, DEFAULT_MANIFEST, DEFAULT_OUT_DIR};
pub use report::{write_json, Report};

use crate::bench::{run_benchmark, DatasetManifest, MetricReport, SplitRecord};
use crate::diagnostics::{run_gradcheck, run_oracle_suite, run_theorem1, AnchorMode};
use crate::error::{Error, Result};
use crate::network::Activation;
use crate::toy::{run_toy, ToyCurves};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ERROR: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "anchored", version, about = "Anchored ensembles for Bayesian regression")]
pub struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run configuration (see docs/config.md).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for reports and curves.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for ensemble training.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic and Monte-Carlo consistency of anchored MAP sampling.
    OracleCheck {
        /// Draw anchors from the prior instead of the exact anchor distribution.
        #[arg(long)]
        wrong_anchor: bool,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Toy-problem curves for the ensemble and the matching GP.
    Toy {
        #[arg(long)]
        activation: Option<Activation>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        members: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Repeated-split regression benchmark.
    Benchmark {
        /// Dataset name from the manifest; repeatable.
        #[arg(long = "dataset")]
        datasets: Vec<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        splits: Option<usize>,
        #[arg(long)]
        members: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Prior-variance dominance ratio across hidden widths.
    Theorem1 {
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<usize>>,
        #[arg(long)]
        seeds: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::OracleCheck { .. } => "oracle-check",
            Command::Toy { .. } => "toy",
            Command::Benchmark { .. } => "benchmark",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Theorem1 { .. } => "theorem1",
        }
    }
}

/// Settings shared by every subcommand after merging flags and file.
struct Context {
    seed: u64,
    out: PathBuf,
    threads: Option<usize>,
}

/// Outcome of a subcommand: whether its checks held.
struct Outcome {
    passed: bool,
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> i32 {
    let file = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        },
        None => RunConfig::default(),
    };
    let ctx = Context {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out: cli
            .out
            .clone()
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        threads: cli.threads.map(|t| t as usize).or(file.threads),
    };
    let result = match cli.command {
        Command::OracleCheck { wrong_anchor, samples } => oracle_check(&ctx, &file, wrong_anchor, samples),
        Command::Toy {
            activation,
            hidden,
            members,
            epochs,
            learning_rate,
        } => toy(&ctx, &file, activation, hidden, members, epochs, learning_rate),
        Command::Benchmark {
            ref datasets,
            ref manifest,
            splits,
            members,
            hidden,
            epochs,
        } => benchmark(&ctx, &file, datasets, manifest.clone(), splits, members, hidden, epochs),
        Command::Gradcheck { instances } => gradcheck(&ctx, &file, instances),
        Command::Theorem1 { ref widths, seeds } => theorem1(&ctx, &file, widths.clone(), seeds),
    };
    match result {
        Ok(Outcome { passed: true }) => EXIT_OK,
        Ok(Outcome { passed: false }) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {} failed: {e}", cli.command.name());
            EXIT_ERROR
        }
    }
}

/// Writes the report for `command`, including a failure message when the
/// computation itself errored, and passes the error on.
fn finish<C: Serialize, R: Serialize>(
    ctx: &Context,
    command: &str,
    config: &C,
    result: Result<(R, bool)>,
) -> Result<(R, bool)> {
    let path = ctx.out.join(format!("{command}.json"));
    let (result, passed, error) = match result {
        Ok((r, passed)) => (Some(r), passed, None),
        Err(e) => (None, false, Some(e)),
    };
    let report = Report {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: ctx.seed,
        config_hash: config_hash(config)?,
        config,
        passed,
        error: error.as_ref().map(|e| e.to_string()),
        result,
    };
    write_json(&path, &report)?;
    println!("report: {}", path.display());
    match (report.result, error) {
        (Some(r), None) => Ok((r, passed)),
        (_, Some(e)) => Err(e),
        (None, None) => unreachable!("a report has either a result or an error"),
    }
}

fn oracle_check(ctx: &Context, file: &RunConfig, wrong_anchor: bool, samples: Option<usize>) -> Result<Outcome> {
    let mut cfg = file.oracle.clone();
    if wrong_anchor {
        cfg.anchor_mode = AnchorMode::Prior;
    }
    if let Some(s) = samples {
        cfg.samples = s;
    }
    let (r, passed) = finish(
        ctx,
        "oracle-check",
        &cfg,
        run_oracle_suite(&cfg, ctx.seed).map(|r| {
            let p = r.passed;
            (r, p)
        }),
    )?;
    println!("anchor distribution      {:?}", r.anchor_mode);
    println!(
        "A S0 A^T vs S_post       max rel error {:.3e} over {} pairs (tol {:.0e})  {}",
        r.identity_max_error,
        r.identity_pairs,
        cfg.identity_tol,
        verdict(r.identity_passed)
    );
    println!(
        "Var[MAP] vs S_post       rel error {:.4} at {} anchors (tol {})  {}",
        r.mc_cov_error,
        r.mc_samples,
        cfg.mc_tol,
        verdict(r.mc_passed)
    );
    println!(
        "trace ratio              {:.4} (1 = exact, < 1 = underestimate)",
        r.mc_variance_ratio
    );
    if !r.mc_passed {
        println!("failing quantity: sampled MAP covariance error {:.4}", r.mc_cov_error);
    }
    Ok(Outcome { passed })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

#[derive(Debug, Serialize)]
struct FarField {
    x: f64,
    ensemble_mean: f64,
    ensemble_epistemic_var: f64,
    gp_mean: f64,
    gp_epistemic_var: f64,
    kernel_prior_var: f64,
}

#[derive(Debug, Serialize)]
struct MemberTraining {
    initial_loss: f64,
    final_loss: f64,
    epochs_run: usize,
}

#[derive(Debug, Serialize)]
struct ToySummary {
    curves_file: String,
    data_file: String,
    grid_points: usize,
    /// Fraction of grid points where the GP mean is inside the ensemble's
    /// two-standard-deviation band.
    gp_mean_in_band: f64,
    far_field: [FarField; 2],
    members: Vec<MemberTraining>,
}

fn far_field(c: &ToyCurves, i: usize) -> FarField {
    FarField {
        x: c.grid[i],
        ensemble_mean: c.ensemble[i].mean,
        ensemble_epistemic_var: c.ensemble[i].epistemic_var,
        gp_mean: c.gp[i].mean,
        gp_epistemic_var: c.gp[i].epistemic_var,
        kernel_prior_var: c.gp_prior_var[i],
    }
}

#[allow(clippy::too_many_arguments)]
fn toy(
    ctx: &Context,
    file: &RunConfig,
    activation: Option<Activation>,
    hidden: Option<usize>,
    members: Option<usize>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
) -> Result<Outcome> {
    let mut cfg = file.toy.clone();
    cfg.seed = ctx.seed;
    if let Some(a) = activation {
        cfg.activation = a;
    }
    if let Some(h) = hidden {
        cfg.hidden_width = h;
    }
    if let Some(m) = members {
        cfg.members = m;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = learning_rate {
        cfg.train.learning_rate = lr;
    }
    let stem = format!("toy-{}", cfg.activation);
    let computed = (|| {
        cfg.validate()?;
        let curves = run_toy(&cfg, ctx.threads)?;
        std::fs::create_dir_all(&ctx.out)?;
        let curves_file = format!("{stem}-curves.csv");
        let data_file = format!("{stem}-data.csv");
        curves.write_csv(BufWriter::new(File::create(ctx.out.join(&curves_file))?))?;
        curves.write_training_csv(BufWriter::new(File::create(ctx.out.join(&data_file))?))?;
        let last = curves.grid.len() - 1;
        let summary = ToySummary {
            curves_file,
            data_file,
            grid_points: curves.grid.len(),
            gp_mean_in_band: curves.band_coverage(2.0),
            far_field: [far_field(&curves, 0), far_field(&curves, last)],
            members: curves
                .training
                .iter()
                .map(|t| MemberTraining {
                    initial_loss: t.initial_loss,
                    final_loss: t.final_loss,
                    epochs_run: t.epochs_run,
                })
                .collect(),
        };
        Ok((summary, true))
    })();
    let (s, _) = finish(ctx, &stem, &cfg, computed)?;
    println!("curves: {}", ctx.out.join(&s.curves_file).display());
    println!(
        "GP mean inside ensemble 2-sigma band at {:.1}% of grid points",
        100.0 * s.gp_mean_in_band
    );
    for f in &s.far_field {
        println!(
            "x = {:>6.2}  ensemble mean {:+.4} var {:.4e} | GP mean {:+.4} var {:.4e} | prior var {:.4e}",
            f.x, f.ensemble_mean, f.ensemble_epistemic_var, f.gp_mean, f.gp_epistemic_var, f.kernel_prior_var
        );
    }
    Ok(Outcome { passed: true })
}

#[derive(Debug, Serialize)]
struct DatasetResult {
    dataset: String,
    n: usize,
    d: usize,
    sigma_eps_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    records: Vec<SplitRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<MetricReport>,
}

#[derive(Debug, Serialize)]
struct BenchmarkEffective<'a> {
    manifest: &'a Path,
    datasets: &'a [String],
    protocol: &'a crate::bench::BenchConfig,
}

#[allow(clippy::too_many_arguments)]
fn benchmark(
    ctx: &Context,
    file: &RunConfig,
    datasets: &[String],
    manifest: Option<PathBuf>,
    splits: Option<usize>,
    members: Option<usize>,
    hidden: Option<usize>,
    epochs: Option<usize>,
) -> Result<Outcome> {
    let mut section = file.benchmark.clone();
    if !datasets.is_empty() {
        section.datasets = datasets.to_vec();
    }
    if let Some(m) = manifest {
        section.manifest = m;
    }
    let p = &mut section.protocol;
    p.seed = ctx.seed;
    if let Some(s) = splits {
        p.splits = s;
    }
    if let Some(m) = members {
        p.members = m;
    }
    if let Some(h) = hidden {
        p.hidden_width = h;
    }
    if let Some(e) = epochs {
        p.train.epochs = e;
    }
    let effective = BenchmarkEffective {
        manifest: &section.manifest,
        datasets: &section.datasets,
        protocol: &section.protocol,
    };
    let mut timings = serde_json::Map::new();
    let computed = (|| {
        if section.datasets.is_empty() {
            return Err(Error::invalid(
                "no datasets selected (use --dataset or [benchmark].datasets)",
            ));
        }
        section.protocol.validate()?;
        let manifest = DatasetManifest::load(&section.manifest)?;
        let mut results = Vec::new();
        let mut all_ok = true;
        for name in &section.datasets {
            let run = manifest.open(name).and_then(|data| {
                let out = run_benchmark(&data, &section.protocol, ctx.threads)?;
                Ok((data, out))
            });
            match run {
                Ok((data, out)) => {
                    timings.insert(name.clone(), serde_json::json!(out.wall_seconds));
                    results.push(DatasetResult {
                        dataset: name.clone(),
                        n: data.len(),
                        d: data.n_features(),
                        sigma_eps_sq: data.sigma_eps_sq,
                        error: None,
                        records: out.records,
                        summary: Some(out.report),
                    });
                }
                Err(e) => {
                    all_ok = false;
                    eprintln!("error: dataset `{name}`: {e}");
                    results.push(DatasetResult {
                        dataset: name.clone(),
                        n: 0,
                        d: 0,
                        sigma_eps_sq: 0.0,
                        error: Some(e.to_string()),
                        records: Vec::new(),
                        summary: None,
                    });
                }
            }
        }
        Ok((results, all_ok))
    })();
    let (results, all_ok) = finish(ctx, "benchmark", &effective, computed)?;
    write_json(&ctx.out.join("benchmark.timing.json"), &timings)?;

    println!(
        "{:<12} {:>7} {:>4} {:>18} {:>18} {:>10}",
        "dataset", "N", "D", "RMSE", "NLL", "time (s)"
    );
    for r in &results {
        match &r.summary {
            Some(s) => {
                let secs: f64 = timings
                    .get(&r.dataset)
                    .and_then(|v| v.as_array())
                    .map(|a| a.iter().filter_map(|x| x.as_f64()).sum())
                    .unwrap_or(0.0);
                println!(
                    "{:<12} {:>7} {:>4} {:>9.3} ± {:<6.3} {:>9.3} ± {:<6.3} {:>10.1}",
                    r.dataset, r.n, r.d, s.rmse_mean, s.rmse_stderr, s.nll_mean, s.nll_stderr, secs
                );
            }
            None => println!("{:<12} error: {}", r.dataset, r.error.as_deref().unwrap_or("")),
        }
    }
    if !all_ok {
        return Err(Error::invalid("one or more datasets failed"));
    }
    Ok(Outcome { passed: true })
}

fn gradcheck(ctx: &Context, file: &RunConfig, instances: Option<usize>) -> Result<Outcome> {
    let mut cfg = file.gradcheck.clone();
    if let Some(n) = instances {
        cfg.instances = n;
    }
    let computed = run_gradcheck(&cfg, ctx.seed).map(|rows| {
        let ok = rows.iter().all(|r| r.passed);
        (rows, ok)
    });
    let (rows, passed) = finish(ctx, "gradcheck", &cfg, computed)?;
    println!("{:<10} {:>9} {:>16}", "activation", "instances", "max rel error");
    for r in &rows {
        println!(
            "{:<10} {:>9} {:>16.3e}  {}",
            r.activation,
            r.instances,
            r.max_rel_error,
            verdict(r.passed)
        );
    }
    Ok(Outcome { passed })
}

fn theorem1(ctx: &Context, file: &RunConfig, widths: Option<Vec<usize>>, seeds: Option<usize>) -> Result<Outcome> {
    let mut cfg = file.theorem1.clone();
    if let Some(w) = widths {
        cfg.widths = w;
    }
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    let computed = run_theorem1(&cfg, ctx.seed).map(|s| {
        let ok = s.passed;
        (s, ok)
    });
    let (summary, passed) = finish(ctx, "theorem1", &cfg, computed)?;
    for run in &summary.runs {
        let ratios: Vec<String> = run
            .rows
            .iter()
            .map(|r| format!("H={}: {:.4e}", r.hidden_width, r.trace_ratio))
            .collect();
        println!(
            "{:<5} seed {:<4} {}  {}",
            run.activation,
            run.seed,
            ratios.join("  "),
            if run.decreasing { "decreasing" } else { "NOT decreasing" }
        );
    }
    println!("majority decreasing for every activation: {}", verdict(passed));
    Ok(Outcome { passed })
}
