use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srrm_core::svr::{
    cross_validate, dual_objective, kkt_violation, svr_predict, svr_train, svr_train_bruteforce, HyperParams,
    SvrTrainConfig,
};

fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Array2<f64>, Vec<f64>, SvrTrainConfig<f64>) {
    let x: Array2<f64> = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
    let y: Vec<f64> = (0..n)
        .map(|i| x.row(i).iter().map(|v| v.sin()).sum::<f64>() + rng.random_range(-0.3..0.3))
        .collect();
    let cfg = SvrTrainConfig::new(
        rng.random_range(0.2..5.0),
        rng.random_range(0.0..0.3),
        rng.random_range(0.5..2.0),
    );
    (x, y, cfg)
}

fn objective(x: &Array2<f64>, y: &[f64], m: &srrm_core::SvrModel64) -> f64 {
    dual_objective(x.view(), y, &m.full_coeffs(y.len()), m.epsilon, m.kernel.sigma()).unwrap()
}

#[test]
fn constant_target_fits_inside_the_tube() {
    let x = array![[0.0], [0.4], [1.1], [2.0], [3.3]];
    let y = [271.5_f64; 5];
    let cfg = SvrTrainConfig::new(10.0, 0.1, 1.0);
    for m in [
        svr_train(x.view(), &y, &cfg).unwrap(),
        svr_train_bruteforce(x.view(), &y, &cfg).unwrap(),
    ] {
        assert_eq!(m.n_support(), 0);
        assert!((m.bias - 271.5).abs() < 1e-12);
        assert!((svr_predict(&m, &[-7.0]).unwrap() - 271.5).abs() < 1e-12);
    }
}

#[test]
fn two_point_problem_matches_hand_solution() {
    // Σβ = 0 forces β = (−t, t); the dual t − (1 − k)t² peaks at
    // t = 1 / (2(1 − k)), both points are free and the fit is exact, b = ½.
    let x = array![[0.0], [1.0]];
    let y = [0.0, 1.0];
    let sigma = 1.0;
    let k = (-0.5_f64).exp();
    let t = 1.0 / (2.0 * (1.0 - k));
    let cfg = SvrTrainConfig::new(10.0, 0.0, sigma);
    let m = svr_train_bruteforce(x.view(), &y, &cfg).unwrap();
    let beta = m.full_coeffs(2);
    assert!((beta[0] + t).abs() <= 1e-8, "{beta:?} vs {t}");
    assert!((beta[1] - t).abs() <= 1e-8);
    assert!((m.bias - 0.5).abs() <= 1e-8);
    let smo = svr_train(x.view(), &y, &cfg).unwrap();
    assert!((smo.full_coeffs(2)[1] - t).abs() <= 1e-6);
}

#[test]
fn six_point_problem_agrees_with_reference() {
    let x = array![[0.0], [0.5], [1.0], [1.5], [2.0], [2.5]];
    let y = [0.1, 0.9, 1.0, 0.2, -0.6, -1.1];
    let cfg = SvrTrainConfig::new(3.0, 0.1, 0.7);
    let a = svr_train(x.view(), &y, &cfg).unwrap();
    let b = svr_train_bruteforce(x.view(), &y, &cfg).unwrap();
    assert!((objective(&x, &y, &a) - objective(&x, &y, &b)).abs() <= 1e-6);
    for z in [-0.5, 0.25, 1.2, 3.0] {
        assert!((svr_predict(&a, &[z]).unwrap() - svr_predict(&b, &[z]).unwrap()).abs() <= 1e-4);
    }
}

#[test]
fn fifty_paired_problems_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let d = rng.random_range(1..=3);
        let (x, y, cfg) = random_problem(&mut rng, 6, d);
        let a = svr_train(x.view(), &y, &cfg).unwrap();
        let b = svr_train_bruteforce(x.view(), &y, &cfg).unwrap();
        let gap = (objective(&x, &y, &a) - objective(&x, &y, &b)).abs();
        assert!(gap <= 1e-6, "objective gap {gap}");
        assert!(a.kkt_violation <= 1e-6 && b.kkt_violation <= 1e-6);
    }
}

#[test]
fn near_linear_data_stays_in_the_tube() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let eps = 0.2;
    let x = Array2::from_shape_fn((25, 1), |(i, _)| i as f64 / 8.0);
    let y: Vec<f64> = (0..25)
        .map(|i| 2.0 * x[[i, 0]] + rng.random_range(-0.15..0.15))
        .collect();
    let m = svr_train(x.view(), &y, &SvrTrainConfig::new(1000.0, eps, 1.0)).unwrap();
    for (i, &t) in y.iter().enumerate() {
        assert!((m.predict(x.row(i)).unwrap() - t).abs() <= eps + 1e-6);
    }
}

#[test]
fn shifting_targets_shifts_only_the_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (x, y, cfg) = random_problem(&mut rng, 15, 2);
    let shift = 250.0;
    let ys: Vec<f64> = y.iter().map(|v| v + shift).collect();
    let a = svr_train(x.view(), &y, &cfg).unwrap();
    let b = svr_train(x.view(), &ys, &cfg).unwrap();
    assert_eq!(a.support_indices, b.support_indices);
    for (p, q) in a.dual_coeffs.iter().zip(&b.dual_coeffs) {
        assert!((p - q).abs() <= 1e-8);
    }
    assert!((b.bias - a.bias - shift).abs() <= 1e-8);
    for i in 0..15 {
        let d = b.predict(x.row(i)).unwrap() - a.predict(x.row(i)).unwrap();
        assert!((d - shift).abs() <= 1e-8);
    }
}

#[test]
fn wider_tube_never_adds_support_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let (x, y, cfg) = random_problem(&mut rng, 30, 2);
        let mut last = usize::MAX;
        for eps in [0.0, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6] {
            let m = svr_train(x.view(), &y, &SvrTrainConfig { epsilon: eps, ..cfg }).unwrap();
            assert!(m.n_support() <= last, "eps {eps}: {} > {last}", m.n_support());
            last = m.n_support();
        }
    }
}

#[test]
fn trained_models_pass_an_independent_kkt_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let (x, y, cfg) = random_problem(&mut rng, 40, 3);
        let m = svr_train(x.view(), &y, &cfg).unwrap();
        assert!(kkt_violation(&m, x.view(), &y).unwrap() <= cfg.tol);
        assert!(m.dual_coeffs.iter().sum::<f64>().abs() <= 1e-8);
    }
}

#[test]
fn cross_validation_penalizes_underfitting() {
    let x = Array2::from_shape_fn((30, 1), |(i, _)| i as f64 / 10.0);
    let y: Vec<f64> = (0..30).map(|i| 3.0 * x[[i, 0]] - 1.0).collect();
    let grid = [HyperParams::new(0.1, 0.05, 2.0), HyperParams::new(100.0, 0.05, 2.0)];
    let out = cross_validate(x.view(), &y, &grid, 5, 42, 1e-6).unwrap();
    assert_eq!(out.best.c, 100.0, "{:?}", out.scores);
}

#[test]
fn cross_validation_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, y, _) = random_problem(&mut rng, 20, 2);
    let grid: Vec<HyperParams<f64>> = [0.5, 5.0]
        .iter()
        .flat_map(|&c| [0.5, 1.0].map(|s| HyperParams::new(c, 0.1, s)))
        .collect();
    let a = cross_validate(x.view(), &y, &grid, 4, 7, 1e-6).unwrap();
    let b = cross_validate(x.view(), &y, &grid, 4, 7, 1e-6).unwrap();
    assert_eq!(a.best, b.best);
    assert_eq!(a.scores, b.scores);
    assert!(cross_validate(x.view(), &y, &grid, 1, 7, 1e-6).is_err());
}
