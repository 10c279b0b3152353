use imbalance_core::linalg::Matrix;
use imbalance_core::optim::{lasso_cd, soft_threshold, AdamState, CdOptions, EarlyStopState};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn to_matrix(m: &DMatrix<f64>) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    Matrix::from_rows(&rows).unwrap()
}

fn orthonormal_design(seed: u64, n: usize, p: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_vec(n, p, gaussian(&mut rng, n * p));
    a.qr().q()
}

fn objective(x: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>, lambda: f64) -> f64 {
    (y - x * b).norm_squared() + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
}

#[test]
fn soft_threshold_examples() {
    assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    assert_eq!(soft_threshold(5.0, 1.0), 4.0);
    assert_eq!(soft_threshold(-5.0, 1.0), -4.0);
    assert_eq!(soft_threshold(1.0, 1.0), 0.0);
    assert_eq!(soft_threshold(3.0, 0.0), 3.0);
}

#[test]
fn orthonormal_design_closed_form() {
    let (n, p) = (200, 20);
    for seed in 0..10 {
        let q = orthonormal_design(seed, n, p);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let y = DVector::from_vec(gaussian(&mut rng, n));
        let xty = q.transpose() * &y;
        for lambda in [0.0, 0.3, 1.0, 2.5] {
            let fit = lasso_cd(&to_matrix(&q), y.as_slice(), lambda, CdOptions::default()).unwrap();
            assert!(fit.converged);
            for j in 0..p {
                let want = soft_threshold(xty[j], lambda / 2.0);
                assert!((fit.beta[j] - want).abs() < 1e-6, "seed {seed} lambda {lambda} j {j}");
            }
        }
    }
}

#[test]
fn zero_penalty_is_least_squares() {
    let (n, p) = (120, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = DMatrix::from_vec(n, p, gaussian(&mut rng, n * p));
    let y = DVector::from_vec(gaussian(&mut rng, n));
    let xtx = x.transpose() * &x;
    let ls = xtx.cholesky().unwrap().solve(&(x.transpose() * &y));
    let fit = lasso_cd(&to_matrix(&x), y.as_slice(), 0.0, CdOptions { tol: 1e-12, max_iter: 100_000 }).unwrap();
    for j in 0..p {
        assert!((fit.beta[j] - ls[j]).abs() < 1e-6, "j {j}: {} vs {}", fit.beta[j], ls[j]);
    }
}

#[test]
fn large_penalty_shrinks_everything() {
    let (n, p) = (60, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = DMatrix::from_vec(n, p, gaussian(&mut rng, n * p));
    let y = DVector::from_vec(gaussian(&mut rng, n));
    let max = (x.transpose() * &y).amax();
    let fit = lasso_cd(&to_matrix(&x), y.as_slice(), 2.0 * max, CdOptions::default()).unwrap();
    assert!(fit.beta.iter().all(|b| *b == 0.0));
}

#[test]
fn cd_reaches_the_lasso_minimum() {
    let (n, p) = (80, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = DMatrix::from_vec(n, p, gaussian(&mut rng, n * p));
    let y = DVector::from_vec(gaussian(&mut rng, n));
    let lambda = 4.0;
    let fit = lasso_cd(&to_matrix(&x), y.as_slice(), lambda, CdOptions { tol: 1e-10, max_iter: 100_000 }).unwrap();
    let b = DVector::from_vec(fit.beta.clone());
    let f0 = objective(&x, &y, &b, lambda);
    // no coordinate perturbation lowers the objective
    for j in 0..p {
        for d in [1e-4, -1e-4] {
            let mut c = b.clone();
            c[j] += d;
            assert!(objective(&x, &y, &c, lambda) >= f0 - 1e-12);
        }
    }
}

#[test]
fn bad_input_is_rejected() {
    let x = Matrix::from_rows(&[[1.0, f64::NAN], [0.0, 1.0]]).unwrap();
    assert!(lasso_cd(&x, &[1.0, 2.0], 0.1, CdOptions::default()).is_err());
    let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    assert!(lasso_cd(&x, &[1.0], 0.1, CdOptions::default()).is_err());
    assert!(lasso_cd(&x, &[1.0, 2.0], -1.0, CdOptions::default()).is_err());
}

#[test]
fn cd_is_deterministic_and_flags_non_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = DMatrix::from_vec(50, 5, gaussian(&mut rng, 250));
    let y = gaussian(&mut rng, 50);
    let a = lasso_cd(&to_matrix(&x), &y, 0.5, CdOptions::default()).unwrap();
    let b = lasso_cd(&to_matrix(&x), &y, 0.5, CdOptions::default()).unwrap();
    assert_eq!(a, b);
    let short = lasso_cd(&to_matrix(&x), &y, 0.0, CdOptions { tol: 0.0, max_iter: 2 }).unwrap();
    assert!(!short.converged);
    assert_eq!(short.sweeps, 2);
}

#[test]
fn adam_zero_gradient_is_fixed_point() {
    let mut s = AdamState::new(3, 0.01);
    let mut p = vec![1.0, -2.0, 3.0];
    s.step(&mut p, &[0.0; 3]);
    assert_eq!(p, vec![1.0, -2.0, 3.0]);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut s = AdamState::new(3, 0.01);
    let mut p = vec![0.0; 3];
    assert!(s.step(&mut p, &[3.0, -0.2, 1e3]));
    // m_hat = g and v_hat = g^2, so each step is lr * g / (|g| + eps)
    for (got, g) in p.iter().zip([3.0f64, -0.2, 1e3]) {
        let want = -0.01 * g / (g.abs() + 1e-8);
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn adam_is_pure_and_skips_nan() {
    let run = || {
        let mut s = AdamState::new(2, 0.05);
        let mut p = vec![0.5, 0.5];
        for k in 0..20 {
            let g = [p[0] - 1.0 + 0.01 * k as f64, 2.0 * p[1]];
            s.step(&mut p, &g);
        }
        (s, p)
    };
    assert_eq!(run(), run());
    let (mut s, mut p) = run();
    let before = (s.clone(), p.clone());
    assert!(!s.step(&mut p, &[f64::NAN, 1.0]));
    assert_eq!(p, before.1);
    assert_eq!(s.nan_skips, 1);
    assert_eq!(s.m, before.0.m);
    assert_eq!(s.step, before.0.step);
}

#[test]
fn early_stop_on_decreasing_losses_never_stops() {
    let mut es = EarlyStopState::new(5);
    for e in 0..100 {
        assert!(!es.update(100.0 - e as f64, &e));
    }
    assert_eq!(es.into_best(), Some(99));
}

#[test]
fn early_stop_on_constant_losses() {
    let patience = 50;
    let mut es = EarlyStopState::new(patience);
    let mut n = 0;
    loop {
        n += 1;
        if es.update(1.0, &n) {
            break;
        }
        assert!(n < 1000);
    }
    assert_eq!(n, patience + 1);
    assert_eq!(es.best_epoch, 1);
}

#[test]
fn early_stop_keeps_best_snapshot() {
    let mut es = EarlyStopState::new(3);
    let losses = [5.0, 4.0, 2.0, 3.0, 3.5, 4.0, 9.0];
    let mut stopped_at = None;
    for (e, l) in losses.iter().enumerate() {
        if es.update(*l, &(e + 1)) {
            stopped_at = Some(e + 1);
            break;
        }
    }
    assert_eq!(stopped_at, Some(6));
    assert_eq!(es.best_epoch, 3);
    assert_eq!(es.into_best(), Some(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn soft_threshold_is_odd(z in -1e3f64..1e3, g in 0.0f64..50.0) {
        prop_assert_eq!(soft_threshold(-z, g), -soft_threshold(z, g));
    }

    #[test]
    fn l1_norm_shrinks_with_penalty(seed in 0u64..10_000, l1 in 0.0f64..5.0, extra in 0.01f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_vec(40, 6, gaussian(&mut rng, 240));
        let y = gaussian(&mut rng, 40);
        let opts = CdOptions { tol: 1e-10, max_iter: 100_000 };
        let norm = |l: f64| lasso_cd(&to_matrix(&x), &y, l, opts).unwrap().beta.iter().map(|b| b.abs()).sum::<f64>();
        prop_assert!(norm(l1 + extra) <= norm(l1) + 1e-8);
    }
}
