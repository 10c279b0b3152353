//! Distributional regression: every distribution parameter is a linear
//! function of the standardized inputs through its link, fitted by
//! full-batch Adam on the L1-penalized mean negative log-likelihood.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dists::{DistParams, Family};
use crate::linalg::{Matrix, Sample};
use crate::optim::{AdamState, EarlyStopState, DEFAULT_PATIENCE};
use crate::{Error, Result};

use super::head::{clamp_eta, eta_bounds, moment_init, nll, nll_and_grad, params_from_eta, Link, Standardizer};

pub const LAMBDA_MIN: f64 = 1e-5;
pub const LAMBDA_MAX: f64 = 10.0;
pub const LR_MIN: f64 = 1e-5;
pub const LR_MAX: f64 = 1e-1;
pub const DEFAULT_MAX_EPOCHS: usize = 1500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GamlssHyper {
    pub family: Family,
    /// L1 rate per distribution parameter; `None` disables the penalty.
    pub lambdas: Vec<Option<f64>>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl GamlssHyper {
    pub fn unregularized(family: Family, learning_rate: f64) -> Self {
        GamlssHyper {
            family,
            lambdas: vec![None; family.n_params()],
            learning_rate,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.len() != self.family.n_params() {
            return Err(Error::Config(format!(
                "{} L1 rates given for a {}-parameter family",
                self.lambdas.len(),
                self.family.n_params()
            )));
        }
        for l in self.lambdas.iter().flatten() {
            if !(*l > LAMBDA_MIN && *l < LAMBDA_MAX) {
                return Err(Error::Config(format!("L1 rate {l} outside ({LAMBDA_MIN}, {LAMBDA_MAX})")));
            }
        }
        if !(self.learning_rate > LR_MIN && self.learning_rate < LR_MAX) {
            return Err(Error::Config(format!(
                "learning rate {} outside ({LR_MIN}, {LR_MAX})",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GamlssModel {
    pub family: Family,
    pub links: Vec<Link>,
    pub standardizer: Standardizer,
    /// One intercept per distribution parameter.
    pub intercepts: Vec<f64>,
    /// Slopes per distribution parameter on the standardized inputs.
    pub coefs: Vec<Vec<f64>>,
    pub lambdas: Vec<Option<f64>>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    /// Range of each linear predictor on the training rows; predictions
    /// are clamped to it.
    #[serde(default)]
    pub eta_bounds: Vec<(f64, f64)>,
    /// Optimizer state at the end of training, resumed by warm starts.
    #[serde(skip)]
    pub optimizer: Option<AdamState>,
}

impl GamlssModel {
    pub fn n_features(&self) -> usize {
        self.standardizer.len()
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.intercepts.len() * (self.n_features() + 1));
        for (b0, b) in self.intercepts.iter().zip(&self.coefs) {
            out.push(*b0);
            out.extend_from_slice(b);
        }
        out
    }

    fn set_flat(&mut self, theta: &[f64]) {
        let w = self.n_features() + 1;
        for k in 0..self.intercepts.len() {
            self.intercepts[k] = theta[k * w];
            self.coefs[k].copy_from_slice(&theta[k * w + 1..(k + 1) * w]);
        }
    }

    /// Linear predictors for an already standardized row.
    fn eta_std(&self, z: &[f64], out: &mut [f64]) {
        for k in 0..self.intercepts.len() {
            out[k] = self.intercepts[k] + crate::linalg::dot(&self.coefs[k], z);
        }
    }

    pub fn predict(&self, row: &[f64]) -> Result<DistParams> {
        if row.len() != self.n_features() {
            return Err(Error::LayoutMismatch { expected: self.n_features(), got: row.len() });
        }
        let mut z = vec![0.0; row.len()];
        self.standardizer.apply_row(row, &mut z);
        let mut eta = [0.0; 3];
        self.eta_std(&z, &mut eta);
        clamp_eta(&mut eta, &self.eta_bounds);
        let p = params_from_eta(self.family, &eta[..self.family.n_params()]);
        p.validate()?;
        Ok(p)
    }

    /// Intercepts and slopes expressed on the unstandardized inputs.
    pub fn raw_coefficients(&self) -> Vec<(f64, Vec<f64>)> {
        let s = &self.standardizer;
        self.intercepts
            .iter()
            .zip(&self.coefs)
            .map(|(b0, b)| {
                let mut c0 = *b0;
                let mut raw = vec![0.0; b.len()];
                for j in 0..b.len() {
                    if s.active[j] {
                        raw[j] = b[j] / s.params[j].scale;
                        c0 -= raw[j] * s.params[j].center;
                    }
                }
                (c0, raw)
            })
            .collect()
    }

    /// Mean negative log-likelihood of standardized data.
    fn mean_nll(&self, z: &Matrix, y: &[f64]) -> f64 {
        let k = self.family.n_params();
        let mut eta = [0.0; 3];
        let mut total = 0.0;
        for i in 0..z.rows() {
            self.eta_std(z.row(i), &mut eta);
            total += nll(self.family, &eta[..k], y[i]);
        }
        total / z.rows() as f64
    }

    /// Penalized training objective and its gradient with respect to the
    /// flattened parameters `[intercept_k, slopes_k]` for each parameter `k`.
    pub fn loss_and_grad(&self, z: &Matrix, y: &[f64]) -> (f64, Vec<f64>) {
        let k = self.family.n_params();
        let p = self.n_features();
        let w = p + 1;
        let n = z.rows() as f64;
        let mut grad = vec![0.0; k * w];
        let mut eta = [0.0; 3];
        let mut g = [0.0; 3];
        let mut total = 0.0;
        for i in 0..z.rows() {
            let row = z.row(i);
            self.eta_std(row, &mut eta);
            total += nll_and_grad(self.family, &eta[..k], y[i], &mut g[..k]);
            for kk in 0..k {
                let gk = g[kk] / n;
                let base = kk * w;
                grad[base] += gk;
                if gk != 0.0 {
                    for (dst, x) in grad[base + 1..base + w].iter_mut().zip(row) {
                        *dst += gk * x;
                    }
                }
            }
        }
        let mut loss = total / n;
        for kk in 0..k {
            if let Some(l) = self.lambdas[kk] {
                let base = kk * w;
                for j in 0..p {
                    let b = self.coefs[kk][j];
                    loss += l * b.abs();
                    grad[base + 1 + j] += l * sign(b);
                }
            }
        }
        (loss, grad)
    }

    /// Standardizes a design with the fitted parameters.
    pub fn standardize(&self, x: &Matrix) -> Matrix {
        self.standardizer.apply(x)
    }
}

fn sign(b: f64) -> f64 {
    if b > 0.0 {
        1.0
    } else if b < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Fits on `train` with early stopping on the validation mean negative
/// log-likelihood and returns the best-validation snapshot. `warm` supplies
/// starting coefficients from an earlier fit with the same layout.
pub fn fit_gamlss(train: &Sample, val: &Sample, hyper: &GamlssHyper, warm: Option<&GamlssModel>) -> Result<GamlssModel> {
    hyper.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::Input("gamlss needs at least two training rows and one validation row".into()));
    }
    if train.features() != val.features() {
        return Err(Error::LayoutMismatch { expected: train.features(), got: val.features() });
    }
    if !train.x.all_finite() || !train.y.iter().all(|v| v.is_finite()) || !val.x.all_finite() || !val.y.iter().all(|v| v.is_finite()) {
        return Err(Error::Input("non-finite gamlss training data".into()));
    }
    let family = hyper.family;
    let k = family.n_params();
    let p = train.features();
    let standardizer = Standardizer::fit(&train.x)?;
    let zt = standardizer.apply(&train.x);
    let zv = standardizer.apply(&val.x);

    let init = moment_init(family, &train.y);
    let mut model = GamlssModel {
        family,
        links: (0..k).map(Link::for_param).collect(),
        standardizer,
        intercepts: init.clone(),
        coefs: vec![vec![0.0; p]; k],
        lambdas: hyper.lambdas.clone(),
        epochs_run: 0,
        best_epoch: 0,
        best_val_nll: f64::INFINITY,
        eta_bounds: Vec::new(),
        optimizer: None,
    };
    let mut resumed = None;
    if let Some(w) = warm.filter(|w| w.family == family && w.n_features() == p) {
        model.intercepts = w.intercepts.clone();
        model.coefs = w.coefs.clone();
        if model.loss_and_grad(&zt, &train.y).0.is_finite() {
            resumed = w.optimizer.clone();
        } else {
            model.intercepts = init.clone();
            model.coefs = vec![vec![0.0; p]; k];
        }
    }
    if !model.loss_and_grad(&zt, &train.y).0.is_finite() {
        return Err(Error::Training("non-finite gamlss loss at initialization".into()));
    }

    let mut theta = model.flat();
    let mut adam = match resumed {
        Some(mut a) if a.m.len() == theta.len() => {
            a.learning_rate = hyper.learning_rate;
            a
        }
        _ => AdamState::new(theta.len(), hyper.learning_rate),
    };
    let mut stop = EarlyStopState::new(hyper.patience);
    stop.start(model.mean_nll(&zv, &val.y), &theta);
    let mut bad = 0;
    for epoch in 0..hyper.max_epochs {
        let (loss, grad) = model.loss_and_grad(&zt, &train.y);
        model.epochs_run = epoch + 1;
        if !loss.is_finite() || !adam.step(&mut theta, &grad) {
            bad += 1;
            if bad > 10 {
                break;
            }
            continue;
        }
        bad = 0;
        model.set_flat(&theta);
        let v = model.mean_nll(&zv, &val.y);
        let v = if v.is_finite() { v } else { f64::INFINITY };
        if stop.update(v, &theta) {
            break;
        }
    }
    let best_val = stop.best_loss;
    let best_epoch = stop.best_epoch;
    let best = stop
        .into_best()
        .ok_or_else(|| Error::Training("no finite validation loss during gamlss training".into()))?;
    model.set_flat(&best);
    model.best_epoch = best_epoch;
    model.best_val_nll = best_val;
    model.optimizer = Some(adam);
    model.eta_bounds = eta_bounds(
        (0..zt.rows()).map(|i| {
            let mut e = [0.0; 3];
            model.eta_std(zt.row(i), &mut e);
            e
        }),
        k,
    );
    Ok(model)
}
