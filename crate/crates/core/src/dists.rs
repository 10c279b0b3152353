//! Location-scale Normal and three-parameter Student-t distributions.

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::math::{digamma, inc_beta, ln_gamma, Float, LN_2PI};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    Normal,
    StudentT,
}

impl Family {
    /// Number of distribution parameters.
    pub fn n_params(self) -> usize {
        match self {
            Family::Normal => 2,
            Family::StudentT => 3,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Family::Normal => "N",
            Family::StudentT => "t",
        }
    }
}

/// Predictive distribution with location `mu`, scale `sigma` and, for the
/// Student-t family, tail weight (degrees of freedom) `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistParams {
    pub family: Family,
    pub mu: f64,
    pub sigma: f64,
    pub tau: Option<f64>,
}

/// Partial derivatives of the log-density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLikGrad {
    pub mu: f64,
    pub sigma: f64,
    pub tau: Option<f64>,
}

impl DistParams {
    pub fn normal(mu: f64, sigma: f64) -> Self {
        DistParams { family: Family::Normal, mu, sigma, tau: None }
    }

    pub fn student_t(mu: f64, sigma: f64, tau: f64) -> Self {
        DistParams { family: Family::StudentT, mu, sigma, tau: Some(tau) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Domain(alloc::format!("scale must be positive, got {}", self.sigma)));
        }
        if !self.mu.is_finite() {
            return Err(Error::Domain("location must be finite".into()));
        }
        match (self.family, self.tau) {
            (Family::Normal, None) => Ok(()),
            (Family::StudentT, Some(t)) if t > 0.0 && t.is_finite() => Ok(()),
            (Family::StudentT, _) => Err(Error::Domain("tail weight must be positive".into())),
            (Family::Normal, Some(_)) => Err(Error::Domain("normal has no tail weight".into())),
        }
    }

    fn tau_unchecked(&self) -> f64 {
        self.tau.unwrap_or(f64::INFINITY)
    }

    pub fn log_density(&self, y: f64) -> Result<f64> {
        self.validate()?;
        Ok(self.log_density_unchecked(y))
    }

    pub(crate) fn log_density_unchecked(&self, y: f64) -> f64 {
        let z = (y - self.mu) / self.sigma;
        match self.family {
            Family::Normal => -0.5 * LN_2PI - self.sigma.ln() - 0.5 * z * z,
            Family::StudentT => {
                let t = self.tau_unchecked();
                ln_gamma(0.5 * (t + 1.0)) - ln_gamma(0.5 * t)
                    - 0.5 * (t * core::f64::consts::PI).ln()
                    - self.sigma.ln()
                    - 0.5 * (t + 1.0) * libm::log1p(z * z / t)
            }
        }
    }

    pub fn density(&self, y: f64) -> Result<f64> {
        Ok(self.log_density(y)?.exp())
    }

    pub fn cdf(&self, y: f64) -> Result<f64> {
        self.validate()?;
        Ok(self.cdf_unchecked(y))
    }

    pub(crate) fn cdf_unchecked(&self, y: f64) -> f64 {
        let z = (y - self.mu) / self.sigma;
        match self.family {
            Family::Normal => std_normal_cdf(z),
            Family::StudentT => student_t_cdf(z, self.tau_unchecked()),
        }
    }

    pub fn quantile(&self, prob: f64) -> Result<f64> {
        self.validate()?;
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::Domain(alloc::format!("probability {prob} outside (0, 1)")));
        }
        let z = match self.family {
            Family::Normal => std_normal_quantile(prob),
            Family::StudentT => student_t_quantile(prob, self.tau_unchecked()),
        };
        Ok(self.mu + self.sigma * z)
    }

    /// Analytic gradient of `log_density(y)` with respect to (mu, sigma, tau).
    pub fn loglik_grad(&self, y: f64) -> Result<LogLikGrad> {
        self.validate()?;
        Ok(self.loglik_grad_unchecked(y))
    }

    pub(crate) fn loglik_grad_unchecked(&self, y: f64) -> LogLikGrad {
        let s = self.sigma;
        let z = (y - self.mu) / s;
        match self.family {
            Family::Normal => LogLikGrad { mu: z / s, sigma: (z * z - 1.0) / s, tau: None },
            Family::StudentT => {
                let t = self.tau_unchecked();
                let z2 = z * z;
                let denom = t + z2;
                let d_mu = (t + 1.0) * z / (s * denom);
                let d_sigma = -1.0 / s + (t + 1.0) * z2 / (s * denom);
                let d_tau = 0.5 * digamma(0.5 * (t + 1.0))
                    - 0.5 * digamma(0.5 * t)
                    - 0.5 / t
                    - 0.5 * libm::log1p(z2 / t)
                    + 0.5 * (t + 1.0) * z2 / (t * denom);
                LogLikGrad { mu: d_mu, sigma: d_sigma, tau: Some(d_tau) }
            }
        }
    }

    /// Location summary used as the expected-value forecast. For tail weight
    /// at or below one the mean does not exist and `mu` is returned flagged.
    pub fn mean_forecast(&self) -> (f64, bool) {
        match self.tau {
            Some(t) if t <= 1.0 => (self.mu, true),
            _ => (self.mu, false),
        }
    }
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

/// Standard normal quantile (Wichura's AS 241 rational approximation,
/// relative accuracy about 1e-16).
pub fn std_normal_quantile(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
            + 67265.770_927_008_700)
            * r
            + 45921.953_931_549_871)
            * r
            + 13731.693_765_509_461)
            * r
            + 1971.590_950_306_551_3)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_5)
            / (((((((5226.495_278_852_545_5 * r + 28729.085_735_721_943) * r
                + 39307.895_800_092_710)
                * r
                + 21213.794_301_586_595)
                * r
                + 5394.196_021_424_751_1)
                * r
                + 687.187_007_492_057_91)
                * r
                + 42.313_330_701_600_911)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.745_450_142_783_414_1e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_61)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691_4)
            * r
            + 4.630_337_846_156_545_3)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_344_9e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_07)
                * r
                + 0.689_767_334_985_100_04)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_758_9)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_123)
            * r
            + 0.296_560_571_828_504_89)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114_4)
            * r
            + 6.657_904_643_501_103_3)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_132_6e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// CDF of the standard Student-t with `nu` degrees of freedom.
pub fn student_t_cdf(z: f64, nu: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    let x = nu / (nu + z * z);
    let tail = 0.5 * inc_beta(0.5 * nu, 0.5, x);
    if z > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn student_t_log_pdf(z: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * core::f64::consts::PI).ln()
        - 0.5 * (nu + 1.0) * libm::log1p(z * z / nu)
}

/// Standard Student-t quantile by safeguarded Newton iteration inside an
/// expanding bracket on the CDF.
pub fn student_t_quantile(p: f64, nu: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    // Solve on the lower tail for accuracy and mirror.
    let (target, sign) = if p > 0.5 { (1.0 - p, 1.0) } else { (p, -1.0) };
    let mut hi = 0.0f64;
    let mut lo = std_normal_quantile(target).min(-1.0);
    while student_t_cdf(lo, nu) > target {
        hi = lo;
        lo *= 2.0;
        if !lo.is_finite() {
            return sign * f64::INFINITY;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = student_t_cdf(x, nu) - target;
        if f.abs() <= 1e-15 * target.max(1e-300) {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let pdf = student_t_log_pdf(x, nu).exp();
        let newton = x - f / pdf;
        x = if pdf > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (hi - lo).abs() <= 1e-15 * (1.0 + lo.abs()) {
            break;
        }
    }
    -sign * x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_log_density_at_mode() {
        let p = DistParams::normal(0.0, 1.0);
        assert!((p.log_density(0.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn invalid_scale_is_domain_error() {
        let p = DistParams::normal(0.0, 0.0);
        assert!(matches!(p.log_density(0.0), Err(Error::Domain(_))));
        let t = DistParams::student_t(0.0, -1.0, 3.0);
        assert!(t.cdf(0.0).is_err());
    }

    #[test]
    fn quantile_rejects_boundary_probabilities() {
        let p = DistParams::normal(0.0, 1.0);
        assert!(p.quantile(0.0).is_err());
        assert!(p.quantile(1.0).is_err());
        assert_eq!(p.quantile(0.5).unwrap(), 0.0);
    }

    #[test]
    fn student_t_is_symmetric() {
        let p = DistParams::student_t(3.0, 2.0, 4.5);
        for a in [0.1, 1.0, 7.5] {
            let l = p.log_density(3.0 + a).unwrap();
            let r = p.log_density(3.0 - a).unwrap();
            assert!((l - r).abs() < 1e-14);
        }
    }

    #[test]
    fn cauchy_quantile_closed_form() {
        // nu = 1: quantile is tan(pi (p - 1/2))
        for p in [0.01, 0.2, 0.75, 0.99] {
            let q = student_t_quantile(p, 1.0);
            let exact = libm::tan(core::f64::consts::PI * (p - 0.5));
            assert!((q - exact).abs() < 1e-9 * (1.0 + exact.abs()), "{p}: {q} vs {exact}");
        }
    }

    #[test]
    fn tail_weight_gradient_negative_far_in_tail() {
        let p = DistParams::student_t(0.0, 1.0, 5.0);
        let g = p.loglik_grad(40.0).unwrap();
        assert!(g.tau.unwrap() < 0.0);
    }

    #[test]
    fn heavy_tail_mean_flag() {
        assert!(DistParams::student_t(1.0, 1.0, 0.8).mean_forecast().1);
        assert!(!DistParams::student_t(1.0, 1.0, 3.0).mean_forecast().1);
    }
}
