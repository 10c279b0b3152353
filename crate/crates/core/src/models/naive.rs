//! Naive forecaster: the point forecast is the quarter-hourly ID1 price and
//! the distribution comes from bootstrapped in-sample residuals.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rng::SeedKey;
use crate::{Error, Result};

use super::bootstrap_quantiles;

pub const MIN_NAIVE_PAIRS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveModel {
    pub residuals: Vec<f64>,
}

/// Builds the residual pool `IP - ID1` from the rows where both are present.
pub fn fit_naive(id1: &[f64], ip: &[f64]) -> Result<NaiveModel> {
    if id1.len() != ip.len() {
        return Err(Error::Input("ID1 and IP lengths differ".into()));
    }
    let residuals: Vec<f64> = id1
        .iter()
        .zip(ip)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| b - a)
        .collect();
    if residuals.len() < MIN_NAIVE_PAIRS {
        return Err(Error::Input(format!(
            "naive model needs at least {MIN_NAIVE_PAIRS} complete pairs, got {}",
            residuals.len()
        )));
    }
    Ok(NaiveModel { residuals })
}

impl NaiveModel {
    pub fn point(&self, id1: f64) -> f64 {
        id1
    }

    pub fn predict(&self, id1: f64, m: usize, key: SeedKey) -> Result<Vec<f64>> {
        bootstrap_quantiles(self.point(id1), &self.residuals, m, key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_naive_pool_is_zero() {
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let m = fit_naive(&x, &x).unwrap();
        assert_eq!(m.residuals.len(), 40);
        assert!(m.residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn skips_missing_and_requires_thirty() {
        let mut ip: Vec<f64> = (0..31).map(|i| 2.0 * i as f64).collect();
        let id1: Vec<f64> = (0..31).map(|i| i as f64).collect();
        assert!(fit_naive(&id1, &ip).is_ok());
        ip[0] = f64::NAN;
        ip[1] = f64::NAN;
        assert!(fit_naive(&id1, &ip).is_err());
        assert!(fit_naive(&vec![], &vec![]).is_err());
    }
}
