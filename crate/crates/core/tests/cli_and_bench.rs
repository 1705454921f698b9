use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use anchored::bench::{
    random_features, run_benchmark, synthetic_dataset, theorem1_check, trace_ratio, BenchConfig, RegressionDataset,
};
use anchored::{Activation, NetworkShape, PriorSpec, TrainConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anchored"))
}

fn run(args: &[&str]) -> i32 {
    bin().args(args).output().unwrap().status.code().unwrap()
}

fn report(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["toy", "--hidden", "abc"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["--threads", "0", "gradcheck"]), 2);
    assert_eq!(run(&[]), 2);
    assert_eq!(run(&["--help"]), 0);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nno_such_key = 3\n").unwrap();
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "gradcheck"]), 2);
    fs::write(&cfg, "[toy]\nhidden_width = \"wide\"\n").unwrap();
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "toy"]), 2);
    let missing = dir.path().join("missing.toml");
    assert_eq!(run(&["--config", missing.to_str().unwrap(), "gradcheck"]), 2);
}

#[test]
fn flags_override_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 5\nout = {:?}\n[gradcheck]\ninstances = 2\n",
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();

    assert_eq!(run(&["--config", cfg, "gradcheck"]), 0);
    let r = report(&out, "gradcheck.json");
    assert_eq!(r["seed"], 5);
    assert_eq!(r["config"]["instances"], 2);
    let hash_file = r["config_hash"].clone();

    assert_eq!(
        run(&["--config", cfg, "--seed", "7", "gradcheck", "--instances", "3"]),
        0
    );
    let r = report(&out, "gradcheck.json");
    assert_eq!(r["seed"], 7);
    assert_eq!(r["config"]["instances"], 3);
    assert_ne!(r["config_hash"], hash_file);

    let plain = dir.path().join("plain");
    assert_eq!(run(&["--out", plain.to_str().unwrap(), "gradcheck"]), 0);
    let r = report(&plain, "gradcheck.json");
    assert_eq!(r["seed"], 0);
    assert_eq!(r["config"]["instances"], 20);
}

#[test]
fn wrong_anchor_distribution_fails_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["--out", out, "oracle-check", "--samples", "20000"]), 0);
    assert_eq!(
        run(&["--out", out, "oracle-check", "--samples", "20000", "--wrong-anchor"]),
        1
    );
    let r = report(dir.path(), "oracle-check.json");
    assert_eq!(r["passed"], false);
    assert!(r["result"]["mc_variance_ratio"].as_f64().unwrap() < 0.5);
}

fn write_dataset_csv(path: &Path, data: &RegressionDataset) {
    let mut w = csv::Writer::from_path(path).unwrap();
    for i in 0..data.len() {
        let mut row: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        row.push(data.y[i].to_string());
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
}

fn synthetic_manifest(dir: &Path) -> PathBuf {
    let data = synthetic_dataset(80, 2, 0.05, 3).unwrap();
    write_dataset_csv(&dir.join("synth.csv"), &data);
    let manifest = dir.join("manifest.toml");
    fs::write(
        &manifest,
        "[datasets.synth]\npath = \"synth.csv\"\nsigma_eps_sq = 0.05\n\n[datasets.absent]\npath = \"absent.csv\"\nsigma_eps_sq = 0.1\n",
    )
    .unwrap();
    manifest
}

#[test]
fn missing_dataset_is_a_runtime_error_with_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic_manifest(dir.path());
    let out = dir.path().join("out");
    let code = run(&[
        "--out",
        out.to_str().unwrap(),
        "benchmark",
        "--manifest",
        manifest.to_str().unwrap(),
        "--dataset",
        "absent",
        "--splits",
        "1",
    ]);
    assert_eq!(code, 3);
    let r = report(&out, "benchmark.json");
    assert_eq!(r["passed"], false);
    assert!(r.to_string().contains("not found"), "{r}");
}

/// Runs each subcommand twice into fresh directories and compares every
/// output file byte for byte; wall-clock timings live in their own file.
#[test]
fn every_subcommand_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic_manifest(dir.path());
    let manifest = manifest.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["oracle-check", "--samples", "5000"],
        vec![
            "toy",
            "--activation",
            "erf",
            "--members",
            "3",
            "--hidden",
            "20",
            "--epochs",
            "100",
        ],
        vec![
            "benchmark",
            "--manifest",
            manifest,
            "--dataset",
            "synth",
            "--splits",
            "2",
            "--members",
            "2",
            "--hidden",
            "10",
            "--epochs",
            "50",
        ],
        vec!["gradcheck", "--instances", "3"],
        vec!["theorem1", "--widths", "10,100", "--seeds", "2"],
    ];
    for (i, args) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("run{i}-{rep}"));
            let mut full = vec!["--seed", "3", "--out", out.to_str().unwrap()];
            full.extend(args.iter().copied());
            let code = run(&full);
            assert!(code == 0 || code == 1, "{args:?} exited with {code}");
            let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| !p.ends_with("benchmark.timing.json"))
                .map(|p| {
                    (
                        p.file_name().unwrap().to_string_lossy().into_owned(),
                        fs::read(&p).unwrap(),
                    )
                })
                .collect();
            files.sort();
            assert!(!files.is_empty());
            outputs.push(files);
        }
        assert!(outputs[0] == outputs[1], "{args:?} output differs between runs");
    }
}

#[test]
fn benchmark_nll_on_linear_data_approaches_noise_entropy() {
    let (n, noise_sd) = (2000, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-2.0f64..2.0));
    let y = DVector::from_fn(n, |i, _| {
        2.0 * x[(i, 0)] - x[(i, 1)] + 1.0 + noise_sd * rng.sample::<f64, _>(StandardNormal)
    });
    let y_var = y.variance();
    // the benchmark noise variance is in standardized target units
    let data = RegressionDataset::new("linear", x, y, noise_sd * noise_sd / y_var).unwrap();
    let cfg = BenchConfig {
        splits: 3,
        train: TrainConfig {
            epochs: 1000,
            ..TrainConfig::default()
        },
        ..BenchConfig::default()
    };
    let out = run_benchmark(&data, &cfg, None).unwrap();
    let ideal = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * noise_sd * noise_sd).ln();
    let nll = out.report.nll_mean;
    assert!((nll - ideal).abs() <= 0.1 * ideal.abs(), "nll {nll}, ideal {ideal}");
    assert!(out.report.rmse_mean < 1.2 * noise_sd, "rmse {}", out.report.rmse_mean);
}

#[test]
fn trace_ratio_scales_inversely_with_noise_and_quadratically_with_prior() {
    let data = synthetic_dataset(50, 1, 0.1, 2).unwrap();
    let shape = NetworkShape::new(1, 30, Activation::Relu).unwrap();
    let phi = random_features(&data.x, &shape, &PriorSpec::default(), 4).unwrap();
    let v = DVector::from_fn(31, |i, _| if i < 30 { 1.0 / 30.0 } else { 1.0 });
    let base = trace_ratio(&phi, &v, 0.1, 30).unwrap();
    let half_noise = trace_ratio(&phi, &v, 0.05, 30).unwrap();
    let double_prior = trace_ratio(&phi, &(&v * 2.0), 0.1, 30).unwrap();
    assert!((half_noise / base - 2.0).abs() < 1e-12);
    assert!((double_prior / base - 4.0).abs() < 1e-12);
}

#[test]
fn trace_ratio_falls_with_width() {
    let data = synthetic_dataset(200, 1, 0.1, 6).unwrap();
    for act in [Activation::Relu, Activation::Erf] {
        let rows = theorem1_check(&data, act, &[10, 100, 1000], &PriorSpec::default(), 1).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].trace_ratio < w[0].trace_ratio, "{act}: {rows:?}");
        }
    }
}
