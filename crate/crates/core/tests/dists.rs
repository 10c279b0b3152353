use imbalance_core::dists::{DistParams, Family};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

#[test]
fn standard_normal_at_zero() {
    let d = DistParams::normal(0.0, 1.0);
    assert!((d.log_density(0.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
    assert!((d.quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-6);
    assert_eq!(d.quantile(0.5).unwrap(), 0.0);
}

#[test]
fn invalid_parameters_are_domain_errors() {
    assert!(DistParams::normal(0.0, 0.0).log_density(1.0).is_err());
    assert!(DistParams::normal(0.0, -1.0).cdf(1.0).is_err());
    assert!(DistParams::student_t(0.0, 1.0, 0.0).quantile(0.3).is_err());
    assert!(DistParams::normal(0.0, 1.0).quantile(1.0).is_err());
    assert!(DistParams::normal(0.0, 1.0).quantile(0.0).is_err());
}

#[test]
fn student_t_is_symmetric_and_tends_to_normal() {
    let t = DistParams::student_t(3.0, 2.0, 4.5);
    for a in [0.1, 1.0, 7.0, 40.0] {
        assert_eq!(t.log_density(3.0 + a).unwrap(), t.log_density(3.0 - a).unwrap());
    }
    let big = DistParams::student_t(0.0, 1.0, 1e6).log_density(1.0).unwrap();
    let n = DistParams::normal(0.0, 1.0).log_density(1.0).unwrap();
    assert!((big - n).abs() < 1e-4);
}

#[test]
fn matches_statrs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let mu = rng.random_range(-50.0..50.0);
        let sigma = rng.random_range(0.1..30.0);
        let tau = rng.random_range(0.3..60.0);
        let y = mu + sigma * rng.random_range(-8.0..8.0);
        let p = rng.random_range(0.001..0.999);
        let ours = DistParams::student_t(mu, sigma, tau);
        let oracle = StudentsT::new(mu, sigma, tau).unwrap();
        assert!((ours.log_density(y).unwrap() - oracle.ln_pdf(y)).abs() < 1e-9);
        assert!((ours.cdf(y).unwrap() - oracle.cdf(y)).abs() < 1e-9);
        let q = ours.quantile(p).unwrap();
        assert!((ours.cdf(q).unwrap() - p).abs() < 1e-9, "tau {tau} p {p}");
        let n = DistParams::normal(mu, sigma);
        let no = Normal::new(mu, sigma).unwrap();
        assert!((n.log_density(y).unwrap() - no.ln_pdf(y)).abs() < 1e-9);
        let dc = (n.cdf(y).unwrap() - no.cdf(y)).abs();
        assert!(dc < 1e-9, "{dc}");
        assert!((n.quantile(p).unwrap() - no.inverse_cdf(p)).abs() < 1e-7 * sigma);
    }
}

#[test]
fn quantile_round_trip_on_grid() {
    for d in [DistParams::normal(10.0, 3.0), DistParams::student_t(-5.0, 8.0, 2.5), DistParams::student_t(0.0, 1.0, 0.7)] {
        for i in 1..=99 {
            let p = i as f64 / 100.0;
            let q = d.quantile(p).unwrap();
            assert!((d.cdf(q).unwrap() - p).abs() < 1e-8);
        }
    }
}

fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-6 * analytic.abs().max(1.0)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-5;
    for case in 0..1000 {
        let mu = rng.random_range(-3.0..3.0);
        let sigma = rng.random_range(0.3..3.0);
        let tau = rng.random_range(1.0..30.0);
        let y = mu + sigma * rng.random_range(-6.0..6.0);
        let d = if case % 2 == 0 { DistParams::normal(mu, sigma) } else { DistParams::student_t(mu, sigma, tau) };
        let g = d.loglik_grad(y).unwrap();
        let ld = |p: DistParams| p.log_density(y).unwrap();
        let gm = fd(|m| ld(DistParams { mu: m, ..d }), mu, h);
        let gs = fd(|s| ld(DistParams { sigma: s, ..d }), sigma, h);
        assert!(close(g.mu, gm), "case {case}: d/dmu {} vs {gm}", g.mu);
        assert!(close(g.sigma, gs), "case {case}: d/dsigma {} vs {gs}", g.sigma);
        if d.family == Family::StudentT {
            let gt = fd(|t| ld(DistParams { tau: Some(t), ..d }), tau, h);
            assert!(close(g.tau.unwrap(), gt), "case {case}: d/dtau {} vs {gt}", g.tau.unwrap());
        } else {
            assert!(g.tau.is_none());
        }
    }
}

#[test]
fn mode_is_stationary_in_location() {
    assert_eq!(DistParams::normal(4.0, 2.0).loglik_grad(4.0).unwrap().mu, 0.0);
    assert_eq!(DistParams::student_t(4.0, 2.0, 3.0).loglik_grad(4.0).unwrap().mu, 0.0);
}

#[test]
fn tail_observation_favors_heavier_tails() {
    for tau in [2.0, 5.0, 20.0] {
        let d = DistParams::student_t(0.0, 1.0, tau);
        let far = d.loglik_grad(15.0).unwrap().tau.unwrap();
        assert!(far < 0.0, "tau {tau}: {far}");
        let h = 1e-5;
        let numeric = (DistParams::student_t(0.0, 1.0, tau + h).log_density(15.0).unwrap()
            - DistParams::student_t(0.0, 1.0, tau - h).log_density(15.0).unwrap())
            / (2.0 * h);
        assert!(numeric < 0.0);
        assert!(d.loglik_grad(0.0).unwrap().tau.unwrap() > 0.0);
    }
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, 1e-10, 40)
}

#[test]
fn normal_density_integrates_to_one() {
    for (mu, sigma) in [(0.0, 1.0), (60.0, 25.0), (-3.0, 0.2)] {
        let d = DistParams::normal(mu, sigma);
        let f = |y: f64| d.density(y).unwrap();
        let mass = integrate(&f, mu - 50.0 * sigma, mu + 50.0 * sigma);
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }
}

#[test]
fn student_t_mass_matches_cdf_endpoints() {
    for tau in [0.8, 2.0, 4.0, 30.0] {
        let d = DistParams::student_t(5.0, 3.0, tau);
        let (a, b) = (5.0 - 150.0, 5.0 + 150.0);
        let f = |y: f64| d.density(y).unwrap();
        let mass = integrate(&f, a, b);
        let by_cdf = d.cdf(b).unwrap() - d.cdf(a).unwrap();
        assert!((mass - by_cdf).abs() < 1e-6, "tau {tau}: {mass} vs {by_cdf}");
        assert!(d.cdf(-1e300).unwrap() < 1e-6);
        assert!(d.cdf(1e300).unwrap() > 1.0 - 1e-6);
    }
}

#[test]
fn mean_forecast_flags_missing_mean() {
    assert_eq!(DistParams::student_t(2.0, 1.0, 0.9).mean_forecast(), (2.0, true));
    assert_eq!(DistParams::student_t(2.0, 1.0, 1.5).mean_forecast(), (2.0, false));
    assert_eq!(DistParams::normal(2.0, 1.0).mean_forecast(), (2.0, false));
}

proptest! {
    #[test]
    fn cdf_is_nondecreasing(mu in -50.0f64..50.0, sigma in 0.05f64..40.0, tau in 0.2f64..80.0, a in -200.0f64..200.0, d in 0.0f64..50.0) {
        for p in [DistParams::normal(mu, sigma), DistParams::student_t(mu, sigma, tau)] {
            prop_assert!(p.cdf(a).unwrap() <= p.cdf(a + d).unwrap());
        }
    }

    #[test]
    fn quantiles_are_location_scale_equivariant(mu in -50.0f64..50.0, sigma in 0.05f64..40.0, tau in 0.5f64..80.0, prob in 0.001f64..0.999) {
        for (p, unit) in [
            (DistParams::normal(mu, sigma), DistParams::normal(0.0, 1.0)),
            (DistParams::student_t(mu, sigma, tau), DistParams::student_t(0.0, 1.0, tau)),
        ] {
            let q = p.quantile(prob).unwrap();
            let z = unit.quantile(prob).unwrap();
            let want = mu + sigma * z;
            prop_assert!((q - want).abs() <= 1e-7 * (want.abs() + sigma).max(1.0), "{} vs {}", q, want);
        }
    }
}
