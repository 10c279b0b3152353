//! Seeded random search over the gamlss and probabilistic-network
//! hyperparameter spaces.
//!
//! Hyperparameters are flat string-keyed maps. Key scheme:
//!
//! * gamlss: `lambda.<param>.on`, `lambda.<param>` (param = mu, sigma, tau),
//!   `learning_rate`;
//! * probNN: `mask.<group>` for the 20 feature groups, `dropout.on`,
//!   `dropout.rate`, `layers`, and per hidden layer `l`:
//!   `layer<l>.activation`, `layer<l>.width`, `layer<l>.kernel_l1.on`,
//!   `layer<l>.kernel_l1`, `layer<l>.activity_l1.on`, `layer<l>.activity_l1`,
//!   plus `learning_rate`.
//!
//! A rate key exists exactly when its `.on` flag is true; `layer3.*` keys
//! exist exactly when `layers` is 3.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dists::Family;
use crate::features::{FeatureGroup, FeatureGroupMask};
use crate::models::{Activation, GamlssHyper, LayerSpec, ProbNNHyper, MAX_WIDTH, MIN_WIDTH};
use crate::rng::SeedKey;
use crate::{Error, Result};
#[allow(unused_imports)]
use crate::math::Float;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
}

impl HyperValue {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            HyperValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            HyperValue::Real(v) => Some(*v),
            HyperValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            HyperValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            HyperValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

pub type Hyperparams = BTreeMap<String, HyperValue>;

#[derive(Clone, Debug, PartialEq)]
pub enum DimKind {
    Flag,
    Categorical(Vec<HyperValue>),
    /// Log-uniform on the open interval.
    LogUniform { lo: f64, hi: f64 },
    /// Uniform on the open interval.
    Uniform { lo: f64, hi: f64 },
    IntUniform { lo: i64, hi: i64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dimension {
    pub name: String,
    pub kind: DimKind,
    /// The dimension is sampled only when every listed key holds the value.
    pub requires: Vec<(String, HyperValue)>,
}

impl Dimension {
    fn new(name: impl Into<String>, kind: DimKind) -> Self {
        Dimension { name: name.into(), kind, requires: Vec::new() }
    }

    fn when(mut self, key: impl Into<String>, value: HyperValue) -> Self {
        self.requires.push((key.into(), value));
        self
    }

    fn active(&self, h: &Hyperparams) -> bool {
        self.requires.iter().all(|(k, v)| h.get(k) == Some(v))
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> HyperValue {
        match &self.kind {
            DimKind::Flag => HyperValue::Bool(rng.random::<bool>()),
            DimKind::Categorical(c) => c[rng.random_range(0..c.len())].clone(),
            DimKind::LogUniform { lo, hi } => {
                let (a, b) = (lo.ln(), hi.ln());
                HyperValue::Real(open_sample(rng, |u| (a + u * (b - a)).exp(), *lo, *hi))
            }
            DimKind::Uniform { lo, hi } => HyperValue::Real(open_sample(rng, |u| lo + u * (hi - lo), *lo, *hi)),
            DimKind::IntUniform { lo, hi } => HyperValue::Int(rng.random_range(*lo..=*hi)),
        }
    }
}

fn open_sample(rng: &mut ChaCha8Rng, map: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    loop {
        let v = map(rng.random::<f64>());
        if v > lo && v < hi {
            return v;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

pub const RATE_MIN: f64 = 1e-5;
pub const RATE_MAX: f64 = 10.0;
pub const LR_MIN: f64 = 1e-5;
pub const LR_MAX: f64 = 1e-1;
pub const PARAM_NAMES: [&str; 3] = ["mu", "sigma", "tau"];

fn rate() -> DimKind {
    DimKind::LogUniform { lo: RATE_MIN, hi: RATE_MAX }
}

fn on() -> HyperValue {
    HyperValue::Bool(true)
}

impl SearchSpace {
    pub fn gamlss(family: Family) -> Self {
        let mut dims = Vec::new();
        for p in &PARAM_NAMES[..family.n_params()] {
            dims.push(Dimension::new(format!("lambda.{p}.on"), DimKind::Flag));
            dims.push(Dimension::new(format!("lambda.{p}"), rate()).when(format!("lambda.{p}.on"), on()));
        }
        dims.push(Dimension::new("learning_rate", DimKind::LogUniform { lo: LR_MIN, hi: LR_MAX }));
        SearchSpace { dims }
    }

    pub fn probnn() -> Self {
        let mut dims = Vec::new();
        for g in FeatureGroup::ALL {
            dims.push(Dimension::new(format!("mask.{}", g.name()), DimKind::Flag));
        }
        dims.push(Dimension::new("dropout.on", DimKind::Flag));
        dims.push(Dimension::new("dropout.rate", DimKind::Uniform { lo: 0.0, hi: 1.0 }).when("dropout.on", on()));
        dims.push(Dimension::new("layers", DimKind::Categorical(vec![HyperValue::Int(2), HyperValue::Int(3)])));
        let acts: Vec<HyperValue> = Activation::ALL.iter().map(|a| HyperValue::Text(a.name().into())).collect();
        for l in 1..=3 {
            let gate = |d: Dimension| if l == 3 { d.when("layers", HyperValue::Int(3)) } else { d };
            let p = format!("layer{l}");
            dims.push(gate(Dimension::new(format!("{p}.activation"), DimKind::Categorical(acts.clone()))));
            dims.push(gate(Dimension::new(
                format!("{p}.width"),
                DimKind::IntUniform { lo: MIN_WIDTH as i64, hi: MAX_WIDTH as i64 },
            )));
            for reg in ["kernel_l1", "activity_l1"] {
                dims.push(gate(Dimension::new(format!("{p}.{reg}.on"), DimKind::Flag)));
                dims.push(gate(Dimension::new(format!("{p}.{reg}"), rate()).when(format!("{p}.{reg}.on"), on())));
            }
        }
        dims.push(Dimension::new("learning_rate", DimKind::LogUniform { lo: LR_MIN, hi: LR_MAX }));
        SearchSpace { dims }
    }

    /// A space over the learning rate only.
    pub fn learning_rate_only() -> Self {
        SearchSpace { dims: vec![Dimension::new("learning_rate", DimKind::LogUniform { lo: LR_MIN, hi: LR_MAX })] }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }
}

/// Draws one configuration; dimensions are visited in order so conditions
/// see their parents. Each dimension has its own stream keyed by its name,
/// so spaces sharing a dimension draw the same value for it.
pub fn sample_trial(space: &SearchSpace, key: SeedKey) -> Hyperparams {
    let mut h = Hyperparams::new();
    for d in &space.dims {
        if d.active(&h) {
            let v = d.sample(&mut key.with_str(&d.name).rng());
            h.insert(d.name.clone(), v);
        }
    }
    h
}

fn get_f64(h: &Hyperparams, k: &str) -> Result<f64> {
    h.get(k).and_then(HyperValue::as_f64).ok_or_else(|| Error::Config(format!("hyperparameter `{k}` missing or not numeric")))
}

fn get_flag(h: &Hyperparams, k: &str) -> Result<bool> {
    match h.get(k) {
        None => Ok(false),
        Some(v) => v.as_bool().ok_or_else(|| Error::Config(format!("hyperparameter `{k}` is not a flag"))),
    }
}

fn optional_rate(h: &Hyperparams, flag: &str, key: &str) -> Result<Option<f64>> {
    if get_flag(h, flag)? {
        Ok(Some(get_f64(h, key)?))
    } else {
        Ok(None)
    }
}

pub fn gamlss_hyper(h: &Hyperparams, family: Family) -> Result<GamlssHyper> {
    let mut out = GamlssHyper::unregularized(family, get_f64(h, "learning_rate")?);
    for (k, p) in PARAM_NAMES[..family.n_params()].iter().enumerate() {
        out.lambdas[k] = optional_rate(h, &format!("lambda.{p}.on"), &format!("lambda.{p}"))?;
    }
    out.validate()?;
    Ok(out)
}

pub fn probnn_hyper(h: &Hyperparams, family: Family) -> Result<ProbNNHyper> {
    let mut mask = FeatureGroupMask::none();
    for g in FeatureGroup::ALL {
        mask.set(g, get_flag(h, &format!("mask.{}", g.name()))?);
    }
    let n_layers = h
        .get("layers")
        .and_then(HyperValue::as_i64)
        .ok_or_else(|| Error::Config("hyperparameter `layers` missing".into()))?;
    let mut layers = Vec::new();
    for l in 1..=n_layers {
        let p = format!("layer{l}");
        let act_name = h
            .get(&format!("{p}.activation"))
            .and_then(HyperValue::as_str)
            .ok_or_else(|| Error::Config(format!("`{p}.activation` missing")))?;
        let activation = Activation::from_name(act_name)
            .ok_or_else(|| Error::Config(format!("unknown activation `{act_name}`")))?;
        let width = h
            .get(&format!("{p}.width"))
            .and_then(HyperValue::as_i64)
            .ok_or_else(|| Error::Config(format!("`{p}.width` missing")))?;
        layers.push(LayerSpec {
            activation,
            width: usize::try_from(width).map_err(|_| Error::Config(format!("negative width {width}")))?,
            kernel_l1: optional_rate(h, &format!("{p}.kernel_l1.on"), &format!("{p}.kernel_l1"))?,
            activity_l1: optional_rate(h, &format!("{p}.activity_l1.on"), &format!("{p}.activity_l1"))?,
        });
    }
    let mut out = ProbNNHyper::new(family, layers, get_f64(h, "learning_rate")?);
    out.mask = Some(mask);
    out.dropout = optional_rate(h, "dropout.on", "dropout.rate")?;
    out.validate()?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status", content = "message")]
pub enum TrialStatus {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub seed: u64,
    pub params: Hyperparams,
    /// Mean validation negative log-likelihood.
    pub val_loss: Option<f64>,
    #[serde(flatten)]
    pub status: TrialStatus,
    pub wall_ms: Option<u64>,
    /// Names of the feature groups, in mask order.
    pub feature_groups: Vec<String>,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok && self.val_loss.is_some_and(f64::is_finite)
    }
}

/// One planned trial: configuration plus the seed handed to the objective.
#[derive(Clone, Debug)]
pub struct PlannedTrial {
    pub trial_id: usize,
    pub params: Hyperparams,
    pub key: SeedKey,
}

/// The deterministic sequence of trial configurations for `seed`.
pub fn trial_plan(space: &SearchSpace, n_trials: usize, seed: u64) -> Vec<PlannedTrial> {
    let base = SeedKey::new(seed).with_str("trial");
    (0..n_trials)
        .map(|i| {
            let k = base.with_u64(i as u64);
            let params = sample_trial(space, k.with_str("sample"));
            PlannedTrial { trial_id: i, params, key: k.with_str("fit") }
        })
        .collect()
}

pub fn record_for(trial: &PlannedTrial, outcome: Result<f64>, wall_ms: Option<u64>) -> TrialRecord {
    let (val_loss, status) = match outcome {
        Ok(v) if v.is_finite() => (Some(v), TrialStatus::Ok),
        Ok(v) => (None, TrialStatus::Failed(format!("non-finite validation loss {v}"))),
        Err(e) => (None, TrialStatus::Failed(e.to_string())),
    };
    TrialRecord {
        trial_id: trial.trial_id,
        seed: trial.key.value(),
        params: trial.params.clone(),
        val_loss,
        status,
        wall_ms,
        feature_groups: FeatureGroup::ALL.iter().map(|g| g.name().to_string()).collect(),
    }
}

/// Index (into `records`) of the completed trial with the smallest loss,
/// ties going to the lowest trial id.
pub fn select_best(records: &[TrialRecord]) -> Result<usize> {
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, r) in records.iter().enumerate() {
        if !r.is_ok() {
            continue;
        }
        let v = r.val_loss.expect("ok trial has a loss");
        if best.is_none_or(|(bv, bid, _)| v < bv || (v == bv && r.trial_id < bid)) {
            best = Some((v, r.trial_id, i));
        }
    }
    best.map(|b| b.2).ok_or_else(|| {
        let reasons: Vec<String> = records
            .iter()
            .take(3)
            .map(|r| match &r.status {
                TrialStatus::Failed(m) => format!("trial {}: {m}", r.trial_id),
                TrialStatus::Ok => format!("trial {}: no finite loss", r.trial_id),
            })
            .collect();
        Error::Tuning(format!("all {} trials failed ({})", records.len(), reasons.join("; ")))
    })
}

/// Running minimum of the completed-trial losses in trial order.
pub fn best_loss_trace(records: &[TrialRecord]) -> Vec<f64> {
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.trial_id);
    let mut best = f64::INFINITY;
    sorted
        .iter()
        .map(|r| {
            if r.is_ok() {
                best = best.min(r.val_loss.expect("ok trial has a loss"));
            }
            best
        })
        .collect()
}

/// Matches persisted records against `plan`; `None` marks trials still to run.
pub fn reuse_records(plan: &[PlannedTrial], previous: &[TrialRecord], seed: u64) -> Result<Vec<Option<TrialRecord>>> {
    plan.iter()
        .map(|t| match previous.iter().find(|r| r.trial_id == t.trial_id) {
            Some(r) if r.params == t.params && r.seed == t.key.value() => Ok(Some(r.clone())),
            Some(_) => Err(Error::Tuning(format!(
                "stored trial {} does not match the plan for seed {seed}",
                t.trial_id
            ))),
            None => Ok(None),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TuneResult {
    pub best: Hyperparams,
    pub best_trial: usize,
    pub records: Vec<TrialRecord>,
}

/// Runs the trials of [`trial_plan`] missing from `previous` and returns the
/// best configuration over all records.
pub fn tune(
    space: &SearchSpace,
    mut objective: impl FnMut(&Hyperparams, SeedKey) -> Result<f64>,
    n_trials: usize,
    seed: u64,
    previous: &[TrialRecord],
) -> Result<TuneResult> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be positive".into()));
    }
    let plan = trial_plan(space, n_trials, seed);
    let reused = reuse_records(&plan, previous, seed)?;
    let records: Vec<TrialRecord> = plan
        .iter()
        .zip(reused)
        .map(|(t, r)| r.unwrap_or_else(|| record_for(t, objective(&t.params, t.key), None)))
        .collect();
    let i = select_best(&records)?;
    Ok(TuneResult { best: records[i].params.clone(), best_trial: records[i].trial_id, records })
}
