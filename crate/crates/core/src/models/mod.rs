//! Forecasting models, quantile extraction and forecast combination.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calendar::DeliveryIndex;
use crate::dists::{DistParams, Family};
use crate::math::quantile_sorted;
use crate::rng::SeedKey;
use crate::{Error, Result};

mod gamlss;
mod head;
mod lasso;
mod naive;
mod probnn;

pub use gamlss::{fit_gamlss, GamlssHyper, GamlssModel};
pub use head::{Link, Standardizer};
pub use lasso::{fit_lasso_bic, lambda_grid, LassoModel, LassoOptions, LAMBDA_GRID_LEN};
pub use naive::{fit_naive, NaiveModel, MIN_NAIVE_PAIRS};
pub use probnn::{
    fit_probnn, Activation, LayerSpec, Network, ProbNNHyper, ProbNNModel, MAX_WIDTH, MIN_WIDTH,
};

/// Number of probabilities on the evaluation grid.
pub const GRID_SIZE: usize = 99;

/// Probability of grid point `i` (0-based): `(i + 1) / 100`.
pub fn grid_prob(i: usize) -> f64 {
    (i + 1) as f64 / 100.0
}

/// The grid `0.01, 0.02, ..., 0.99`.
pub fn quantile_grid() -> [f64; GRID_SIZE] {
    core::array::from_fn(grid_prob)
}

/// Grid index of probability `p`, when `p` is a grid point.
pub fn grid_index(p: f64) -> Option<usize> {
    let k = libm::round(p * 100.0);
    ((1.0..=99.0).contains(&k) && (k / 100.0 - p).abs() < 1e-9).then(|| k as usize - 1)
}

/// A predictive distribution represented by its 99 grid quantiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub delivery: DeliveryIndex,
    pub model_id: String,
    pub values: Vec<f64>,
    /// Set when the input values were not sorted and had to be rearranged.
    pub rearranged: bool,
}

impl QuantileForecast {
    /// Validates the length and finiteness; unsorted values are sorted and
    /// flagged.
    pub fn new(delivery: DeliveryIndex, model_id: impl Into<String>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != GRID_SIZE {
            return Err(Error::GridMismatch(format!("expected {GRID_SIZE} quantiles, got {}", values.len())));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("non-finite quantile value".into()));
        }
        let rearranged = values.windows(2).any(|w| w[1] < w[0]);
        if rearranged {
            values.sort_by(f64::total_cmp);
        }
        Ok(QuantileForecast { delivery, model_id: model_id.into(), values, rearranged })
    }

    pub fn probs(&self) -> [f64; GRID_SIZE] {
        quantile_grid()
    }

    /// Quantile at a grid probability.
    pub fn at(&self, p: f64) -> Option<f64> {
        grid_index(p).map(|i| self.values[i])
    }

    pub fn median(&self) -> f64 {
        self.values[49]
    }
}

/// `point + eps_m` for `m` residuals drawn with replacement from `pool`,
/// summarized by the empirical quantiles on the grid.
pub fn bootstrap_quantiles(point: f64, pool: &[f64], m: usize, key: SeedKey) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::Input("empty residual pool".into()));
    }
    if m < GRID_SIZE {
        return Err(Error::Input(format!("need at least {GRID_SIZE} bootstrap draws, got {m}")));
    }
    if !point.is_finite() {
        return Err(Error::Domain(format!("non-finite point forecast {point}")));
    }
    let mut rng = key.rng();
    let mut draws: Vec<f64> = (0..m).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    draws.sort_by(f64::total_cmp);
    Ok((0..GRID_SIZE).map(|i| point + quantile_sorted(&draws, grid_prob(i))).collect())
}

/// Quantiles of a parametric forecast on the grid.
pub fn dist_to_quantiles(p: &DistParams) -> Result<Vec<f64>> {
    p.validate()?;
    (0..GRID_SIZE).map(|i| p.quantile(grid_prob(i))).collect()
}

/// Probability-wise mean of two quantile forecasts for the same delivery.
pub fn combine(a: &QuantileForecast, b: &QuantileForecast, model_id: &str) -> Result<QuantileForecast> {
    if a.delivery != b.delivery {
        return Err(Error::GridMismatch(format!("deliveries {} and {} differ", a.delivery, b.delivery)));
    }
    if a.values.len() != b.values.len() {
        return Err(Error::GridMismatch("quantile grids differ".into()));
    }
    let values = a.values.iter().zip(&b.values).map(|(x, y)| 0.5 * (x + y)).collect();
    QuantileForecast::new(a.delivery, model_id, values)
}

/// Identifier of a forecasting model family and distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelId {
    Naive,
    Lasso,
    Gamlss(Family),
    ProbNN(Family),
}

pub const COMBINATION_ID: &str = "Combination";

impl ModelId {
    pub const ALL: [ModelId; 6] = [
        ModelId::Naive,
        ModelId::Lasso,
        ModelId::Gamlss(Family::Normal),
        ModelId::Gamlss(Family::StudentT),
        ModelId::ProbNN(Family::Normal),
        ModelId::ProbNN(Family::StudentT),
    ];

    pub fn family(self) -> Option<Family> {
        match self {
            ModelId::Gamlss(f) | ModelId::ProbNN(f) => Some(f),
            _ => None,
        }
    }

    /// Whether the model is tuned and split into train/validation.
    pub fn is_parametric(self) -> bool {
        self.family().is_some()
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::Naive => f.write_str("naive"),
            ModelId::Lasso => f.write_str("lasso"),
            ModelId::Gamlss(fam) => write!(f, "gamlss.{}", fam.suffix()),
            ModelId::ProbNN(fam) => write!(f, "probNN.{}", fam.suffix()),
        }
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        ModelId::ALL
            .iter()
            .copied()
            .find(|m| m.to_string().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::Config(format!("unknown model id `{s}`")))
    }
}

impl Serialize for ModelId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
