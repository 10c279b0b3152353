//! Input standardization and the distribution head shared by gamlss and
//! the probabilistic network.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dists::{DistParams, Family};
use crate::linalg::Matrix;
#[allow(unused_imports)]
use crate::math::Float;
use crate::math::{kurtosis_excess, mean, sample_sd, sigmoid, softplus, softplus_inv};
use crate::transforms::{fit_transform, TransformKind, TransformParams};
use crate::Result;

/// Lower bound applied after the softplus so scale and tail weight stay
/// strictly positive in floating point.
pub const POSITIVE_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Softplus,
}

impl Link {
    pub fn for_param(k: usize) -> Link {
        if k == 0 {
            Link::Identity
        } else {
            Link::Softplus
        }
    }

    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Softplus => softplus(eta).max(POSITIVE_FLOOR),
        }
    }

    /// Derivative of the inverse link.
    pub fn inverse_deriv(self, eta: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Softplus => {
                if softplus(eta) > POSITIVE_FLOOR {
                    sigmoid(eta)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn apply(self, theta: f64) -> f64 {
        match self {
            Link::Identity => theta,
            Link::Softplus => softplus_inv(theta),
        }
    }
}

/// Maps linear predictors to distribution parameters.
pub(crate) fn params_from_eta(family: Family, eta: &[f64]) -> DistParams {
    let mu = Link::Identity.inverse(eta[0]);
    let sigma = Link::Softplus.inverse(eta[1]);
    match family {
        Family::Normal => DistParams::normal(mu, sigma),
        Family::StudentT => DistParams::student_t(mu, sigma, Link::Softplus.inverse(eta[2])),
    }
}

/// Negative log-density of `y` and its gradient with respect to `eta`.
pub(crate) fn nll_and_grad(family: Family, eta: &[f64], y: f64, grad: &mut [f64]) -> f64 {
    let p = params_from_eta(family, eta);
    let g = p.loglik_grad_unchecked(y);
    grad[0] = -g.mu;
    grad[1] = -g.sigma * Link::Softplus.inverse_deriv(eta[1]);
    if let (Family::StudentT, Some(gt)) = (family, g.tau) {
        grad[2] = -gt * Link::Softplus.inverse_deriv(eta[2]);
    }
    -p.log_density_unchecked(y)
}

pub(crate) fn nll(family: Family, eta: &[f64], y: f64) -> f64 {
    -params_from_eta(family, eta).log_density_unchecked(y)
}

pub const TAU_INIT_MIN: f64 = 2.5;
pub const TAU_INIT_MAX: f64 = 30.0;

/// Unconditional starting values of the linear predictors from the moments
/// of the training response.
pub(crate) fn moment_init(family: Family, y: &[f64]) -> Vec<f64> {
    let m = mean(y);
    let sd = sample_sd(y).max(1e-6);
    match family {
        Family::Normal => alloc::vec![m, softplus_inv(sd)],
        Family::StudentT => {
            let k = kurtosis_excess(y);
            let tau = if k > 0.0 { 4.0 + 6.0 / k } else { TAU_INIT_MAX };
            let tau = tau.clamp(TAU_INIT_MIN, TAU_INIT_MAX);
            let sigma = sd * ((tau - 2.0) / tau).sqrt();
            alloc::vec![m, softplus_inv(sigma), softplus_inv(tau)]
        }
    }
}

/// Per-parameter `(min, max)` of the linear predictors over a set of rows.
pub(crate) fn eta_bounds(etas: impl Iterator<Item = [f64; 3]>, k: usize) -> Vec<(f64, f64)> {
    let mut b = alloc::vec![(f64::INFINITY, f64::NEG_INFINITY); k];
    for e in etas {
        for i in 0..k {
            b[i].0 = b[i].0.min(e[i]);
            b[i].1 = b[i].1.max(e[i]);
        }
    }
    b
}

/// Clamps linear predictors to stored bounds; empty bounds leave them as is.
pub(crate) fn clamp_eta(eta: &mut [f64], bounds: &[(f64, f64)]) {
    for (e, &(lo, hi)) in eta.iter_mut().zip(bounds) {
        if lo <= hi {
            *e = e.clamp(lo, hi);
        }
    }
}

/// Per-column standardization fitted on training rows. Columns that are
/// constant in training are inactive and map to zero. Inputs are clamped to
/// the training range of their column first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub params: Vec<TransformParams>,
    pub active: Vec<bool>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        let mut params = Vec::with_capacity(x.cols());
        let mut active = Vec::with_capacity(x.cols());
        let mut lower = Vec::with_capacity(x.cols());
        let mut upper = Vec::with_capacity(x.cols());
        for j in 0..x.cols() {
            let c = x.column(j);
            let f = fit_transform(&c, TransformKind::Standardize)?;
            params.push(f.params);
            active.push(!f.degenerate);
            lower.push(c.iter().copied().fold(f64::INFINITY, f64::min));
            upper.push(c.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        Ok(Standardizer { params, active, lower, upper })
    }

    pub fn identity(p: usize) -> Self {
        Standardizer {
            params: alloc::vec![TransformParams::identity(); p],
            active: alloc::vec![true; p],
            lower: alloc::vec![f64::NEG_INFINITY; p],
            upper: alloc::vec![f64::INFINITY; p],
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for j in 0..self.params.len() {
            out[j] = if self.active[j] {
                self.params[j].apply(row[j].clamp(self.lower[j], self.upper[j]))
            } else {
                0.0
            };
        }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            self.apply_row(x.row(i), out.row_mut(i));
        }
        out
    }
}
