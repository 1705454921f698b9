use anchored::ensemble::{pool_outputs, regulariser};
use anchored::toy::{run_toy, ToyConfig};
use anchored::{
    build_ensemble, kernel_eval, materialize_prior, Activation, Batch, Ensemble, KernelSpec, NetworkParams,
    NetworkShape, PriorSpec, TrainConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn two_member_pooling() {
    let out = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
    let p = pool_outputs(&out, 0.25)[0];
    assert_eq!(p.mean, 2.0);
    assert_eq!(p.epistemic_var, 2.0);
    assert_eq!(p.aleatoric_var, 0.25);
    assert_eq!(p.total_var(), 2.25);
}

#[test]
fn pooling_ignores_member_order_and_collapses_duplicates() {
    let out = DMatrix::from_row_slice(2, 4, &[0.3, -1.2, 2.5, 0.9, 4.0, 4.0, 4.0, 4.0]);
    let shuffled = DMatrix::from_columns(&[out.column(2), out.column(0), out.column(3), out.column(1)]);
    let (a, b) = (pool_outputs(&out, 0.1), pool_outputs(&shuffled, 0.1));
    assert!((a[0].mean - b[0].mean).abs() < 1e-15);
    assert!((a[0].epistemic_var - b[0].epistemic_var).abs() < 1e-15);
    assert_eq!(a[1].epistemic_var, 0.0);
    assert_eq!(a[1].mean, 4.0);
}

#[test]
fn single_member_has_no_epistemic_variance() {
    let p = pool_outputs(&DMatrix::from_row_slice(1, 1, &[0.7]), 0.1)[0];
    assert_eq!(p.epistemic_var, 0.0);
}

/// Variance of the network output over independent prior draws, at H = 2000.
#[test]
fn wide_prior_draws_match_kernel_variance() {
    let points = [[-1.5], [0.0], [0.8]];
    for act in [Activation::Relu, Activation::Erf, Activation::Rbf] {
        let shape = NetworkShape::new(1, 2000, act).unwrap();
        let spec = PriorSpec::default();
        let prior = materialize_prior(&shape, &spec).unwrap();
        let kernel = KernelSpec::for_network(&shape, &spec).unwrap();
        let x = DMatrix::from_row_slice(3, 1, &[points[0][0], points[1][0], points[2][0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 50_000;
        let mut sum_sq = DVector::zeros(3);
        for _ in 0..draws {
            let params = NetworkParams::new(shape, prior.sample_with(&mut rng)).unwrap();
            let f = params.forward_batch(&x).unwrap();
            sum_sq += f.component_mul(&f);
        }
        for (i, p) in points.iter().enumerate() {
            let mc = sum_sq[i] / draws as f64;
            let exact = kernel_eval(&kernel, p, p).unwrap();
            assert!(
                (mc - exact).abs() <= 0.03 * exact,
                "{act} at {p:?}: draws {mc}, kernel {exact}"
            );
        }
    }
}

#[test]
fn untrained_ensemble_spread_is_the_prior() {
    let shape = NetworkShape::new(1, 500, Activation::Erf).unwrap();
    let spec = PriorSpec::default();
    let ens = build_ensemble(2000, shape, &spec, 0.1, 9).unwrap();
    let kernel = KernelSpec::for_network(&shape, &spec).unwrap();
    let x = DMatrix::from_row_slice(2, 1, &[-0.5, 1.5]);
    for (p, q) in ens.predict(&x).unwrap().iter().zip([-0.5, 1.5]) {
        let k = kernel_eval(&kernel, &[q], &[q]).unwrap();
        // relative sd of a 2000-sample variance is ~3%
        assert!(
            (p.epistemic_var - k).abs() <= 0.1 * k,
            "at {q}: {} vs {k}",
            p.epistemic_var
        );
        assert!(p.mean.abs() <= 4.0 * (k / 2000.0).sqrt());
    }
}

fn small_problem() -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(15, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
    let y = DVector::from_fn(15, |i, _| (x[(i, 0)] * 2.0).sin() + 0.5 * x[(i, 1)]);
    (x, y)
}

#[test]
fn training_is_independent_of_thread_count() {
    let (x, y) = small_problem();
    let shape = NetworkShape::new(2, 20, Activation::Relu).unwrap();
    let cfg = TrainConfig {
        epochs: 300,
        ..TrainConfig::default()
    };
    let mut a = build_ensemble(4, shape, &PriorSpec::default(), 0.05, 3).unwrap();
    let mut b = a.clone();
    a.train(Batch::new(&x, &y).unwrap(), &cfg, Some(1)).unwrap();
    b.train(Batch::new(&x, &y).unwrap(), &cfg, Some(2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn members_are_seeded_consecutively() {
    let shape = NetworkShape::new(1, 5, Activation::Erf).unwrap();
    let ens = build_ensemble(3, shape, &PriorSpec::default(), 0.1, 40).unwrap();
    let prior = materialize_prior(&shape, &PriorSpec::default()).unwrap();
    for (i, m) in ens.members().iter().enumerate() {
        assert_eq!(m.seed, 40 + i as u64);
        assert_eq!(m.anchor, prior.sample(40 + i as u64));
        assert_eq!(m.params.theta(), &m.anchor);
    }
}

#[test]
fn training_never_increases_member_loss() {
    let (x, y) = small_problem();
    let shape = NetworkShape::new(2, 10, Activation::Rbf).unwrap();
    let mut ens = build_ensemble(3, shape, &PriorSpec::default(), 0.05, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    for s in ens.train(Batch::new(&x, &y).unwrap(), &cfg, None).unwrap() {
        assert!(s.final_loss <= s.initial_loss);
    }
}

#[test]
fn save_and_load_round_trip() {
    let (x, y) = small_problem();
    let shape = NetworkShape::new(2, 8, Activation::Erf).unwrap();
    let mut ens = build_ensemble(3, shape, &PriorSpec::default(), 0.05, 12).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    ens.train(Batch::new(&x, &y).unwrap(), &cfg, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ens.save(dir.path()).unwrap();
    let back = Ensemble::load(dir.path()).unwrap();
    assert_eq!(back, ens);
    assert_eq!(back.predict(&x).unwrap(), ens.predict(&x).unwrap());
}

#[test]
fn from_anchors_rejects_wrong_regulariser_length() {
    let shape = NetworkShape::linear(2).unwrap();
    let prior = materialize_prior(&shape, &PriorSpec::default()).unwrap();
    let gamma = regulariser(&prior.var, 0.1);
    let short = gamma.rows(0, 2).into_owned();
    assert!(Ensemble::from_anchors(shape, short, [(0, DVector::zeros(3))], 0.1).is_err());
    assert!(Ensemble::from_anchors(shape, gamma, std::iter::empty(), 0.1).is_err());
}

/// With 200 members the sample variance at the far edge has ~10% relative
/// sd, so the 30% prior-variance tolerance is a real test there.
#[test]
fn large_rbf_ensemble_far_field_variance() {
    let cfg = ToyConfig {
        activation: Activation::Rbf,
        members: 200,
        ..ToyConfig::default()
    };
    let curves = run_toy(&cfg, None).unwrap();
    for idx in [0, curves.grid.len() - 1] {
        let (e, k) = (&curves.ensemble[idx], curves.gp_prior_var[idx]);
        assert!(e.mean.abs() < 0.1);
        let ratio = e.epistemic_var / k;
        assert!((ratio - 1.0).abs() <= 0.3, "edge {idx}: ratio {ratio}");
    }
}
