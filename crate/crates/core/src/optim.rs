//! Coordinate descent for the lasso, Adam, and early stopping.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
#[allow(unused_imports)]
use crate::math::Float;
use crate::{Error, Result};

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CdOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CdOptions {
    fn default() -> Self {
        CdOptions { tol: 1e-7, max_iter: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    pub beta: Vec<f64>,
    pub sweeps: usize,
    /// False when `max_iter` sweeps ran without reaching `tol`.
    pub converged: bool,
}

/// Minimizes `||y - X b||^2 + lambda * ||b||_1` by cyclic coordinate descent
/// in ascending coordinate order.
///
/// The callers in this crate pass centered, unit-L2-norm columns, but any
/// full-rank or rank-deficient design is accepted; all-zero columns stay at 0.
pub fn lasso_cd(x: &Matrix, y: &[f64], lambda: f64, opts: CdOptions) -> Result<LassoFit> {
    if x.rows() != y.len() {
        return Err(Error::Input("design and response lengths differ".into()));
    }
    if x.rows() < 2 {
        return Err(Error::Input("lasso needs at least two observations".into()));
    }
    if !x.all_finite() || !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Input("non-finite entries in lasso input".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Input("lambda must be non-negative".into()));
    }
    let cols = x.columns();
    Ok(lasso_cd_columns(&cols, y, lambda, opts, None))
}

/// Column-major worker with optional warm start.
pub(crate) fn lasso_cd_columns(
    cols: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
    opts: CdOptions,
    warm: Option<&[f64]>,
) -> LassoFit {
    let p = cols.len();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut beta = match warm {
        Some(w) => w.to_vec(),
        None => vec![0.0; p],
    };
    let mut resid = y.to_vec();
    for (j, c) in cols.iter().enumerate() {
        if beta[j] != 0.0 {
            for (r, v) in resid.iter_mut().zip(c) {
                *r -= v * beta[j];
            }
        }
    }
    let half = 0.5 * lambda;
    #[cfg(debug_assertions)]
    let mut last_obj = objective(&resid, &beta, lambda);
    let mut sweeps = 0;
    let mut converged = false;
    let all: Vec<usize> = (0..p).collect();
    // Full sweeps alternate with sweeps over the current nonzero set until a
    // full sweep moves no coefficient by more than `tol`.
    let mut full = true;
    while sweeps < opts.max_iter {
        sweeps += 1;
        let active: Vec<usize>;
        let coords: &[usize] = if full {
            &all
        } else {
            active = (0..p).filter(|&j| beta[j] != 0.0).collect();
            &active
        };
        let mut max_step = 0.0f64;
        for &j in coords {
            if norms[j] <= 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let c = &cols[j];
            let old = beta[j];
            let rho: f64 = c.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() + norms[j] * old;
            let new = soft_threshold(rho, half) / norms[j];
            let delta = new - old;
            if delta != 0.0 {
                for (r, v) in resid.iter_mut().zip(c) {
                    *r -= v * delta;
                }
                beta[j] = new;
                max_step = max_step.max(delta.abs());
            }
        }
        #[cfg(debug_assertions)]
        {
            let obj = objective(&resid, &beta, lambda);
            debug_assert!(
                obj <= last_obj + 1e-9 * (1.0 + last_obj.abs()),
                "lasso objective increased: {last_obj} -> {obj}"
            );
            last_obj = obj;
        }
        if max_step < opts.tol {
            if full {
                converged = true;
                break;
            }
            full = true;
        } else {
            full = false;
        }
    }
    LassoFit { beta, sweeps, converged }
}

#[cfg(debug_assertions)]
fn objective(resid: &[f64], beta: &[f64], lambda: f64) -> f64 {
    resid.iter().map(|r| r * r).sum::<f64>() + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Bias-corrected Adam with the standard constants.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates skipped because the gradient was not finite.
    pub nan_skips: u64,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            nan_skips: 0,
        }
    }

    /// Applies one descent update. A non-finite gradient leaves both the
    /// parameters and the moments untouched and returns `false`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> bool {
        assert_eq!(params.len(), self.m.len(), "parameter shape mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient shape mismatch");
        if !grads.iter().all(|g| g.is_finite()) {
            self.nan_skips += 1;
            return false;
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        true
    }
}

/// Early-stopping controller with Keras semantics: training stops once
/// `patience` consecutive updates bring no strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopState<P> {
    pub best_loss: f64,
    pub since_improvement: usize,
    pub patience: usize,
    pub best: Option<P>,
    pub best_epoch: usize,
    updates: usize,
}

pub const DEFAULT_PATIENCE: usize = 50;

impl<P: Clone> EarlyStopState<P> {
    pub fn new(patience: usize) -> Self {
        EarlyStopState {
            best_loss: f64::INFINITY,
            since_improvement: 0,
            patience,
            best: None,
            best_epoch: 0,
            updates: 0,
        }
    }

    /// Registers the starting point as epoch 0, so training only replaces it
    /// on improvement.
    pub fn start(&mut self, val_loss: f64, params: &P) {
        if val_loss.is_finite() {
            self.best_loss = val_loss;
            self.best = Some(params.clone());
            self.best_epoch = 0;
        }
    }

    /// Records a validation loss; returns `true` when training should stop.
    pub fn update(&mut self, val_loss: f64, params: &P) -> bool {
        self.updates += 1;
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best = Some(params.clone());
            self.best_epoch = self.updates;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        self.since_improvement >= self.patience
    }

    pub fn into_best(self) -> Option<P> {
        self.best
    }
}
