//! Probabilistic multilayer perceptron whose output layer parametrizes the
//! predictive distribution, trained by minibatch Adam with manual
//! backpropagation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dists::{DistParams, Family};
use crate::features::{FeatureGroup, FeatureGroupMask};
use crate::linalg::{Matrix, Sample};
#[allow(unused_imports)]
use crate::math::Float;
use crate::math::{sigmoid, softplus};
use crate::optim::{AdamState, EarlyStopState, DEFAULT_PATIENCE};
use crate::rng::SeedKey;
use crate::{Error, Result};

use super::gamlss::{LAMBDA_MAX, LAMBDA_MIN, LR_MAX, LR_MIN};
use super::head::{clamp_eta, eta_bounds, moment_init, nll, nll_and_grad, params_from_eta, Standardizer};

pub const MIN_WIDTH: usize = 24;
pub const MAX_WIDTH: usize = 1024;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_EPOCHS: usize = 1500;
/// Training aborts after more consecutive non-finite batches than this.
pub const MAX_BAD_BATCHES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
    Sigmoid,
    Softmax,
    Softplus,
    Tanh,
}

impl Activation {
    pub const ALL: [Activation; 6] = [
        Activation::Elu,
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Softmax,
        Activation::Softplus,
        Activation::Tanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|a| a.name() == s)
    }

    fn forward(self, z: &[f64], a: &mut [f64]) {
        match self {
            Activation::Softmax => {
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for (o, v) in a.iter_mut().zip(z) {
                    *o = (v - m).exp();
                    s += *o;
                }
                for o in a.iter_mut() {
                    *o /= s;
                }
            }
            _ => {
                for (o, &v) in a.iter_mut().zip(z) {
                    *o = match self {
                        Activation::Elu => {
                            if v > 0.0 {
                                v
                            } else {
                                libm::expm1(v)
                            }
                        }
                        Activation::Relu => v.max(0.0),
                        Activation::Sigmoid => sigmoid(v),
                        Activation::Softplus => softplus(v),
                        Activation::Tanh => libm::tanh(v),
                        Activation::Softmax => unreachable!(),
                    };
                }
            }
        }
    }

    /// Turns `d loss / d a` into `d loss / d z` in place.
    fn backward(self, z: &[f64], a: &[f64], da: &mut [f64]) {
        match self {
            Activation::Softmax => {
                let s_da: f64 = a.iter().zip(da.iter()).map(|(s, d)| s * d).sum();
                for (d, s) in da.iter_mut().zip(a) {
                    *d = s * (*d - s_da);
                }
            }
            _ => {
                for ((d, &zv), &av) in da.iter_mut().zip(z).zip(a) {
                    *d *= match self {
                        Activation::Elu => {
                            if zv > 0.0 {
                                1.0
                            } else {
                                av + 1.0
                            }
                        }
                        Activation::Relu => {
                            if zv > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Activation::Sigmoid => av * (1.0 - av),
                        Activation::Softplus => sigmoid(zv),
                        Activation::Tanh => 1.0 - av * av,
                        Activation::Softmax => unreachable!(),
                    };
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub activation: Activation,
    pub width: usize,
    /// L1 rate on the layer's weights.
    pub kernel_l1: Option<f64>,
    /// L1 rate on the layer's outputs.
    pub activity_l1: Option<f64>,
}

impl LayerSpec {
    pub fn plain(activation: Activation, width: usize) -> Self {
        LayerSpec { activation, width, kernel_l1: None, activity_l1: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbNNHyper {
    pub family: Family,
    /// Feature groups fed to the network; `None` keeps every column.
    pub mask: Option<FeatureGroupMask>,
    /// Dropout rate applied to the inputs during training.
    pub dropout: Option<f64>,
    pub layers: Vec<LayerSpec>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Skips the layer-count and width bounds.
    #[serde(default)]
    pub relaxed: bool,
}

impl ProbNNHyper {
    pub fn new(family: Family, layers: Vec<LayerSpec>, learning_rate: f64) -> Self {
        ProbNNHyper {
            family,
            mask: None,
            dropout: None,
            layers,
            learning_rate,
            max_epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            patience: DEFAULT_PATIENCE,
            relaxed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.relaxed {
            if !(2..=3).contains(&self.layers.len()) {
                return Err(Error::Config(format!("{} hidden layers, expected 2 or 3", self.layers.len())));
            }
            for l in &self.layers {
                if !(MIN_WIDTH..=MAX_WIDTH).contains(&l.width) {
                    return Err(Error::Config(format!("layer width {} outside [{MIN_WIDTH}, {MAX_WIDTH}]", l.width)));
                }
            }
        }
        for l in &self.layers {
            if l.width == 0 {
                return Err(Error::Config("zero-width layer".into()));
            }
            for r in [l.kernel_l1, l.activity_l1].into_iter().flatten() {
                if !(r > LAMBDA_MIN && r < LAMBDA_MAX) {
                    return Err(Error::Config(format!("L1 rate {r} outside ({LAMBDA_MIN}, {LAMBDA_MAX})")));
                }
            }
        }
        if let Some(d) = self.dropout {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::Config(format!("dropout rate {d} outside (0, 1)")));
            }
        }
        if !(self.learning_rate > LR_MIN && self.learning_rate < LR_MAX) {
            return Err(Error::Config(format!("learning rate {} outside ({LR_MIN}, {LR_MAX})", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Dense layers with a linear head producing one linear predictor per
/// distribution parameter. All weights live in one flat vector: for each
/// layer (the head last) a row-major `out x in` weight block followed by the
/// bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub family: Family,
    pub n_inputs: usize,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<f64>,
}

/// Activations of one forward pass.
struct Trace {
    z: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    eta: [f64; 3],
}

impl Network {
    /// All-zero network.
    pub fn new(family: Family, n_inputs: usize, layers: Vec<LayerSpec>) -> Self {
        let mut net = Network { family, n_inputs, layers, params: Vec::new() };
        net.params = vec![0.0; net.n_params()];
        net
    }

    fn dims(&self) -> Vec<(usize, usize)> {
        let mut d = Vec::with_capacity(self.layers.len() + 1);
        let mut fan_in = self.n_inputs;
        for l in &self.layers {
            d.push((fan_in, l.width));
            fan_in = l.width;
        }
        d.push((fan_in, self.family.n_params()));
        d
    }

    pub fn n_params(&self) -> usize {
        self.dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::new();
        let mut at = 0;
        for (i, o) in self.dims() {
            off.push(at);
            at += (i + 1) * o;
        }
        off
    }

    /// Weight block and bias of layer `l`; `l == layers.len()` is the head.
    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (i, o) = self.dims()[l];
        let start = self.offsets()[l];
        let block = &mut self.params[start..start + (i + 1) * o];
        block.split_at_mut(i * o)
    }

    /// Glorot-uniform weights, zero biases, head bias set to `head_bias`.
    pub fn init_glorot(&mut self, head_bias: &[f64], rng: &mut impl Rng) {
        let n_layers = self.layers.len() + 1;
        for l in 0..n_layers {
            let (i, o) = self.dims()[l];
            let limit = (6.0 / (i + o) as f64).sqrt();
            let (w, b) = self.layer_mut(l);
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
            b.fill(0.0);
        }
        let (_, b) = self.layer_mut(n_layers - 1);
        b.copy_from_slice(head_bias);
    }

    fn forward_trace(&self, x: &[f64]) -> Trace {
        let dims = self.dims();
        let off = self.offsets();
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, spec) in self.layers.iter().enumerate() {
            let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
            let (i, o) = dims[l];
            let w = &self.params[off[l]..off[l] + i * o];
            let b = &self.params[off[l] + i * o..off[l] + (i + 1) * o];
            let mut z = b.to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                *zr += crate::linalg::dot(&w[r * i..(r + 1) * i], input);
            }
            let mut a = vec![0.0; o];
            spec.activation.forward(&z, &mut a);
            zs.push(z);
            acts.push(a);
        }
        let h = self.layers.len();
        let input: &[f64] = if h == 0 { x } else { &acts[h - 1] };
        let (i, o) = dims[h];
        let w = &self.params[off[h]..off[h] + i * o];
        let b = &self.params[off[h] + i * o..off[h] + (i + 1) * o];
        let mut eta = [0.0; 3];
        for r in 0..o {
            eta[r] = b[r] + crate::linalg::dot(&w[r * i..(r + 1) * i], input);
        }
        Trace { z: zs, a: acts, eta }
    }

    /// Linear predictors of the head for one (standardized) input.
    pub fn forward(&self, x: &[f64]) -> [f64; 3] {
        self.forward_trace(x).eta
    }

    pub fn dist(&self, x: &[f64]) -> DistParams {
        let eta = self.forward(x);
        params_from_eta(self.family, &eta[..self.family.n_params()])
    }

    /// Mean negative log-likelihood plus the L1 penalties over a batch, and
    /// the gradient with respect to [`Network::params`]. `keep` holds the
    /// per-input dropout multipliers, one row per sample.
    pub fn loss_and_grad(&self, x: &Matrix, y: &[f64], keep: Option<&Matrix>) -> (f64, Vec<f64>) {
        let dims = self.dims();
        let off = self.offsets();
        let k = self.family.n_params();
        let h = self.layers.len();
        let n = x.rows() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        let mut xin = vec![0.0; self.n_inputs];
        let mut g = [0.0; 3];
        for s in 0..x.rows() {
            match keep {
                Some(m) => {
                    for ((o, v), kk) in xin.iter_mut().zip(x.row(s)).zip(m.row(s)) {
                        *o = v * kk;
                    }
                }
                None => xin.copy_from_slice(x.row(s)),
            }
            let tr = self.forward_trace(&xin);
            total += nll_and_grad(self.family, &tr.eta[..k], y[s], &mut g[..k]);
            // head
            let input: &[f64] = if h == 0 { &xin } else { &tr.a[h - 1] };
            let (i, _) = dims[h];
            let mut delta: Vec<f64> = g[..k].iter().map(|v| v / n).collect();
            let mut da = vec![0.0; i];
            {
                let w = &self.params[off[h]..off[h] + i * k];
                for r in 0..k {
                    let d = delta[r];
                    let gw = &mut grad[off[h] + r * i..off[h] + (r + 1) * i];
                    for c in 0..i {
                        gw[c] += d * input[c];
                        da[c] += d * w[r * i + c];
                    }
                    grad[off[h] + i * k + r] += d;
                }
            }
            for l in (0..h).rev() {
                let spec = &self.layers[l];
                if let Some(rate) = spec.activity_l1 {
                    total += rate * tr.a[l].iter().map(|v| v.abs()).sum::<f64>();
                    for (d, a) in da.iter_mut().zip(&tr.a[l]) {
                        *d += rate * sign(*a) / n;
                    }
                }
                spec.activation.backward(&tr.z[l], &tr.a[l], &mut da);
                delta = da;
                let (i, o) = dims[l];
                let input: &[f64] = if l == 0 { &xin } else { &tr.a[l - 1] };
                let w = &self.params[off[l]..off[l] + i * o];
                let mut prev = vec![0.0; i];
                for r in 0..o {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    let gw = &mut grad[off[l] + r * i..off[l] + (r + 1) * i];
                    for c in 0..i {
                        gw[c] += d * input[c];
                        prev[c] += d * w[r * i + c];
                    }
                    grad[off[l] + i * o + r] += d;
                }
                da = prev;
            }
        }
        let mut loss = total / n;
        for (l, spec) in self.layers.iter().enumerate() {
            if let Some(rate) = spec.kernel_l1 {
                let (i, o) = dims[l];
                for idx in off[l]..off[l] + i * o {
                    let w = self.params[idx];
                    loss += rate * w.abs();
                    grad[idx] += rate * sign(w);
                }
            }
        }
        (loss, grad)
    }

    fn mean_nll(&self, x: &Matrix, y: &[f64]) -> f64 {
        let k = self.family.n_params();
        let total: f64 = (0..x.rows()).map(|i| nll(self.family, &self.forward(x.row(i))[..k], y[i])).sum();
        total / x.rows() as f64
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbNNModel {
    pub network: Network,
    pub standardizer: Standardizer,
    /// Input columns used, as indices into the full feature row.
    pub columns: Vec<usize>,
    pub n_inputs_full: usize,
    pub mask: Option<FeatureGroupMask>,
    pub dropout: Option<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    /// Range of each head pre-activation on the training rows; predictions
    /// are clamped to it.
    #[serde(default)]
    pub eta_bounds: Vec<(f64, f64)>,
    /// Optimizer state at the end of training, resumed by warm starts.
    #[serde(skip)]
    pub optimizer: Option<AdamState>,
}

impl ProbNNModel {
    fn select(&self, row: &[f64]) -> Vec<f64> {
        let raw: Vec<f64> = self.columns.iter().map(|&j| row[j]).collect();
        let mut z = vec![0.0; raw.len()];
        self.standardizer.apply_row(&raw, &mut z);
        z
    }

    pub fn predict(&self, row: &[f64]) -> Result<DistParams> {
        if row.len() != self.n_inputs_full {
            return Err(Error::LayoutMismatch { expected: self.n_inputs_full, got: row.len() });
        }
        let mut eta = self.network.forward(&self.select(row));
        clamp_eta(&mut eta, &self.eta_bounds);
        let k = self.network.family.n_params();
        let p = params_from_eta(self.network.family, &eta[..k]);
        p.validate()?;
        Ok(p)
    }
}

fn selected_columns(hyper: &ProbNNHyper, p: usize, groups: Option<&[FeatureGroup]>) -> Result<Vec<usize>> {
    match (&hyper.mask, groups) {
        (None, _) => Ok((0..p).collect()),
        (Some(m), Some(g)) => {
            if g.len() != p {
                return Err(Error::LayoutMismatch { expected: p, got: g.len() });
            }
            Ok((0..p).filter(|&j| m.includes(g[j])).collect())
        }
        (Some(_), None) => Err(Error::Config("feature mask given without column groups".into())),
    }
}

/// Minibatch training with early stopping on the validation mean negative
/// log-likelihood; returns the best-validation snapshot. Shuffling, dropout
/// and initialization are driven by `key` alone.
pub fn fit_probnn(
    train: &Sample,
    val: &Sample,
    hyper: &ProbNNHyper,
    groups: Option<&[FeatureGroup]>,
    key: SeedKey,
    warm: Option<&ProbNNModel>,
) -> Result<ProbNNModel> {
    hyper.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("probNN needs training and validation rows".into()));
    }
    if train.features() != val.features() {
        return Err(Error::LayoutMismatch { expected: train.features(), got: val.features() });
    }
    if !train.x.all_finite() || !train.y.iter().all(|v| v.is_finite()) || !val.x.all_finite() || !val.y.iter().all(|v| v.is_finite()) {
        return Err(Error::Input("non-finite probNN training data".into()));
    }
    let columns = selected_columns(hyper, train.features(), groups)?;
    let xt = train.x.select_columns(&columns);
    let xv = val.x.select_columns(&columns);
    let standardizer = Standardizer::fit(&xt)?;
    let zt = standardizer.apply(&xt);
    let zv = standardizer.apply(&xv);

    let mut rng = key.rng();
    let mut net = Network::new(hyper.family, columns.len(), hyper.layers.clone());
    net.init_glorot(&moment_init(hyper.family, &train.y), &mut rng);
    let mut resumed = None;
    if let Some(w) = warm {
        if w.columns == columns && w.network.layers == net.layers && w.network.family == net.family {
            net.params = w.network.params.clone();
            resumed = w.optimizer.clone();
        }
    }

    let n = zt.rows();
    let bs = hyper.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = match resumed {
        Some(mut a) if a.m.len() == net.params.len() => {
            a.learning_rate = hyper.learning_rate;
            a
        }
        _ => AdamState::new(net.params.len(), hyper.learning_rate),
    };
    let mut stop = EarlyStopState::new(hyper.patience);
    stop.start(net.mean_nll(&zv, &val.y), &net.params);
    let mut epochs_run = 0;
    let mut bad = 0;
    'epochs: for epoch in 0..hyper.max_epochs {
        epochs_run = epoch + 1;
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            let xb = zt.select_rows(chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| train.y[i]).collect();
            let keep = hyper.dropout.map(|r| {
                let mut m = Matrix::zeros(xb.rows(), xb.cols());
                let scale = 1.0 / (1.0 - r);
                for i in 0..xb.rows() {
                    for v in m.row_mut(i) {
                        *v = if rng.random::<f64>() < r { 0.0 } else { scale };
                    }
                }
                m
            });
            let (loss, grad) = net.loss_and_grad(&xb, &yb, keep.as_ref());
            if !loss.is_finite() || !adam.step(&mut net.params, &grad) {
                bad += 1;
                if bad > MAX_BAD_BATCHES {
                    return Err(Error::Training(format!(
                        "non-finite loss for {bad} consecutive batches in epoch {}",
                        epoch + 1
                    )));
                }
                continue;
            }
            bad = 0;
        }
        let v = net.mean_nll(&zv, &val.y);
        let v = if v.is_finite() { v } else { f64::INFINITY };
        if stop.update(v, &net.params) {
            break 'epochs;
        }
    }
    let best_val = stop.best_loss;
    let best_epoch = stop.best_epoch;
    net.params = stop
        .into_best()
        .ok_or_else(|| Error::Training("no finite validation loss during probNN training".into()))?;
    let eta_bounds = eta_bounds((0..zt.rows()).map(|i| net.forward(zt.row(i))), hyper.family.n_params());
    Ok(ProbNNModel {
        eta_bounds,
        optimizer: Some(adam),
        network: net,
        standardizer,
        columns,
        n_inputs_full: train.features(),
        mask: hyper.mask,
        dropout: hyper.dropout,
        epochs_run,
        best_epoch,
        best_val_nll: best_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn fd_check(net: &Network, x: &Matrix, y: &[f64], tol: f64) {
        let (_, g) = net.loss_and_grad(x, y, None);
        for i in 0..net.params.len() {
            let h = 1e-6 * (1.0 + net.params[i].abs());
            let mut a = net.clone();
            let mut b = net.clone();
            a.params[i] += h;
            b.params[i] -= h;
            let fd = (a.loss_and_grad(x, y, None).0 - b.loss_and_grad(x, y, None).0) / (2.0 * h);
            let err = (fd - g[i]).abs() / (fd.abs().max(g[i].abs()).max(1e-6));
            assert!(err < tol, "param {i}: fd {fd} vs analytic {}", g[i]);
        }
    }

    #[test]
    fn gradients_for_every_activation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        for act in Activation::ALL {
            for family in [Family::Normal, Family::StudentT] {
                let layers = vec![
                    LayerSpec { activation: act, width: 4, kernel_l1: Some(0.01), activity_l1: Some(0.02) },
                    LayerSpec::plain(Activation::Tanh, 3),
                ];
                let mut net = Network::new(family, 3, layers);
                let bias = moment_init(family, &y);
                net.init_glorot(&bias, &mut rng);
                fd_check(&net, &x, &y, 1e-4);
            }
        }
    }

    #[test]
    fn constant_network() {
        let mut net = Network::new(Family::StudentT, 2, vec![LayerSpec::plain(Activation::Relu, 5)]);
        let (_, b) = net.layer_mut(1);
        b.copy_from_slice(&[1.0, 0.5, 2.0]);
        let a = net.dist(&[3.0, -1.0]);
        let c = net.dist(&[-7.0, 0.2]);
        assert_eq!(a, c);
        assert_eq!(a.mu, 1.0);
    }

    #[test]
    fn hyper_bounds() {
        let layers = vec![LayerSpec::plain(Activation::Elu, 24), LayerSpec::plain(Activation::Elu, 1024)];
        let mut h = ProbNNHyper::new(Family::Normal, layers, 0.01);
        assert!(h.validate().is_ok());
        h.layers[0].width = 23;
        assert!(h.validate().is_err());
        h.relaxed = true;
        assert!(h.validate().is_ok());
        h.relaxed = false;
        h.layers.truncate(1);
        h.layers[0].width = 30;
        assert!(h.validate().is_err());
    }
}
