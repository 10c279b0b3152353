//! Rolling-window estimation and out-of-sample forecasting.
//!
//! Out-of-sample days are the panel days `D .. D + N` (0-based offsets). The
//! forecast for day `t` comes from models fitted on the `D` days
//! `t - D .. t`; the parametric models use the first `train_days` of that
//! window for training and the last `val_days` for early stopping. One model
//! is estimated per (model, quarter-hour) chain.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{add_days, DeliveryIndex};
use crate::features::{FeatureAssembler, FeatureGroup, FeatureLayout, TradeBook};
use crate::linalg::{Matrix, Sample};
use crate::models::{
    dist_to_quantiles, fit_gamlss, fit_lasso_bic, fit_naive, fit_probnn, GamlssHyper, GamlssModel, LassoModel,
    LassoOptions, ModelId, NaiveModel, ProbNNHyper, ProbNNModel, QuantileForecast, GRID_SIZE,
};
use crate::panel::{col, MarketPanel};
use crate::rng::SeedKey;
use crate::tuning::{gamlss_hyper, probnn_hyper, Hyperparams};
use crate::{Error, Result};

pub const PAPER_QH: [u8; 16] = [1, 2, 3, 4, 25, 26, 27, 28, 49, 50, 51, 52, 73, 74, 75, 76];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollingConfig {
    /// In-sample window length `D` in days.
    pub in_sample_days: usize,
    /// Number of out-of-sample days `N`.
    pub out_of_sample_days: usize,
    pub train_days: usize,
    pub val_days: usize,
    pub qh: Vec<u8>,
    /// Bootstrap draws `M` for naive and lasso.
    pub bootstrap_draws: usize,
    pub refit_every: usize,
    pub models: Vec<ModelId>,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    #[serde(default)]
    pub lasso: LassoOptions,
}

impl RollingConfig {
    /// The full-scale setting: 730 in-sample days, 539 out-of-sample days.
    pub fn paper() -> Self {
        RollingConfig {
            in_sample_days: 730,
            out_of_sample_days: 539,
            train_days: 547,
            val_days: 183,
            qh: PAPER_QH.to_vec(),
            bootstrap_draws: 10_000,
            refit_every: 1,
            models: ModelId::ALL.to_vec(),
            seed: 0,
            max_epochs: 1500,
            patience: 50,
            lasso: LassoOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_days + self.val_days != self.in_sample_days {
            return Err(Error::Config(format!(
                "train_days ({}) + val_days ({}) must equal in_sample_days ({})",
                self.train_days, self.val_days, self.in_sample_days
            )));
        }
        if self.train_days == 0 || self.val_days == 0 {
            return Err(Error::Config("train_days and val_days must be positive".into()));
        }
        if self.qh.is_empty() || self.qh.iter().any(|q| !(1..=96).contains(q)) {
            return Err(Error::Config("quarter-hours must be a non-empty subset of 1..=96".into()));
        }
        if self.qh.iter().collect::<BTreeSet<_>>().len() != self.qh.len() {
            return Err(Error::Config("duplicate quarter-hours".into()));
        }
        if self.out_of_sample_days == 0 {
            return Err(Error::Config("out_of_sample_days must be at least 1".into()));
        }
        if self.refit_every == 0 {
            return Err(Error::Config("refit_every must be at least 1".into()));
        }
        if self.bootstrap_draws < GRID_SIZE {
            return Err(Error::Config(format!("bootstrap_draws must be at least {GRID_SIZE}")));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Tuned hyperparameters per (model, quarter-hour).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TunedParams {
    pub entries: Vec<TunedEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedEntry {
    pub model: ModelId,
    pub qh: u8,
    pub params: Hyperparams,
}

impl TunedParams {
    pub fn get(&self, model: ModelId, qh: u8) -> Option<&Hyperparams> {
        self.entries.iter().find(|e| e.model == model && e.qh == qh).map(|e| &e.params)
    }

    pub fn insert(&mut self, model: ModelId, qh: u8, params: Hyperparams) {
        self.entries.retain(|e| !(e.model == model && e.qh == qh));
        self.entries.push(TunedEntry { model, qh, params });
        self.entries.sort_by_key(|e| (e.model, e.qh));
    }
}

/// Decoded training hyperparameters of a parametric model.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelHyper {
    Gamlss(GamlssHyper),
    ProbNN(ProbNNHyper),
}

impl ModelHyper {
    pub fn decode(model: ModelId, h: &Hyperparams, cfg: &RollingConfig) -> Result<Self> {
        match model {
            ModelId::Gamlss(f) => {
                let mut g = gamlss_hyper(h, f)?;
                g.max_epochs = cfg.max_epochs;
                g.patience = cfg.patience;
                Ok(ModelHyper::Gamlss(g))
            }
            ModelId::ProbNN(f) => {
                let mut p = probnn_hyper(h, f)?;
                p.max_epochs = cfg.max_epochs;
                p.patience = cfg.patience;
                Ok(ModelHyper::ProbNN(p))
            }
            _ => Err(Error::Config(format!("{model} takes no tuned hyperparameters"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub model_id: String,
    pub delivery: DeliveryIndex,
    /// Expected-value forecast.
    pub mu_hat: f64,
    pub quantiles: Vec<f64>,
    /// Forecast day on which the model was (re-)estimated.
    pub fit_date: NaiveDate,
    /// Out-of-sample day index of that estimation.
    pub window_id: usize,
}

impl ForecastRecord {
    pub fn forecast(&self) -> Result<QuantileForecast> {
        QuantileForecast::new(self.delivery, self.model_id.clone(), self.quantiles.clone())
    }

    fn key(&self) -> (&str, DeliveryIndex) {
        (&self.model_id, self.delivery)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub model_id: String,
    pub delivery: DeliveryIndex,
    pub message: String,
}

/// Forecast records keyed uniquely by (model id, delivery), kept sorted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastStore {
    records: Vec<ForecastRecord>,
    pub failures: Vec<FitFailure>,
}

impl ForecastStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a store, rejecting duplicate keys and malformed grids.
    pub fn from_records(records: Vec<ForecastRecord>, failures: Vec<FitFailure>) -> Result<Self> {
        let mut s = ForecastStore { records, failures };
        for r in &s.records {
            if r.quantiles.len() != GRID_SIZE {
                return Err(Error::GridMismatch(format!(
                    "record {} {} has {} quantiles",
                    r.model_id,
                    r.delivery,
                    r.quantiles.len()
                )));
            }
        }
        s.records.sort_by(|a, b| a.key().cmp(&b.key()));
        if let Some(w) = s.records.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(Error::Integrity(format!("duplicate forecast for {} at {}", w[0].model_id, w[0].delivery)));
        }
        s.failures.sort_by(|a, b| (&a.model_id, a.delivery).cmp(&(&b.model_id, b.delivery)));
        Ok(s)
    }

    pub fn records(&self) -> &[ForecastRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, model_id: &str, delivery: DeliveryIndex) -> Option<&ForecastRecord> {
        self.records
            .binary_search_by(|r| r.key().cmp(&(model_id, delivery)))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn insert(&mut self, r: ForecastRecord) -> Result<()> {
        if r.quantiles.len() != GRID_SIZE {
            return Err(Error::GridMismatch(format!("record has {} quantiles", r.quantiles.len())));
        }
        match self.records.binary_search_by(|x| x.key().cmp(&r.key())) {
            Ok(_) => Err(Error::Integrity(format!("duplicate forecast for {} at {}", r.model_id, r.delivery))),
            Err(i) => {
                self.records.insert(i, r);
                Ok(())
            }
        }
    }

    /// Adds the records of `other` whose keys are not present; returns how
    /// many were added.
    pub fn append_new(&mut self, other: &ForecastStore) -> usize {
        let mut added = 0;
        for r in &other.records {
            if self.get(&r.model_id, r.delivery).is_none() {
                self.insert(r.clone()).expect("key checked absent");
                added += 1;
            }
        }
        for f in &other.failures {
            if !self.failures.contains(f) {
                self.failures.push(f.clone());
            }
        }
        added
    }

    pub fn model_ids(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.model_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn records_for<'a>(&'a self, model_id: &'a str) -> impl Iterator<Item = &'a ForecastRecord> + 'a {
        self.records.iter().filter(move |r| r.model_id == model_id)
    }
}

/// Probability-wise average of two models' forecasts on their common
/// deliveries; the expected-value forecast is averaged too.
pub fn combination_records(store: &ForecastStore, a: &str, b: &str, id: &str) -> Vec<ForecastRecord> {
    store
        .records_for(a)
        .filter_map(|ra| {
            let rb = store.get(b, ra.delivery)?;
            Some(ForecastRecord {
                model_id: id.to_string(),
                delivery: ra.delivery,
                mu_hat: 0.5 * (ra.mu_hat + rb.mu_hat),
                quantiles: ra.quantiles.iter().zip(&rb.quantiles).map(|(x, y)| 0.5 * (x + y)).collect(),
                fit_date: ra.fit_date.max(rb.fit_date),
                window_id: ra.window_id.max(rb.window_id),
            })
        })
        .collect()
}

/// Feature matrices and targets for a set of quarter-hours over the whole
/// panel. Row `d` of each matrix belongs to panel day offset `d`; day 0 has
/// no previous day and stays NaN.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub start: NaiveDate,
    pub n_days: usize,
    pub layout: Arc<FeatureLayout>,
    per_qh: BTreeMap<u8, (Matrix, Vec<f64>)>,
    id1_col: usize,
}

impl Dataset {
    pub fn features(&self, qh: u8) -> Option<&Matrix> {
        self.per_qh.get(&qh).map(|v| &v.0)
    }

    pub fn targets(&self, qh: u8) -> Option<&[f64]> {
        self.per_qh.get(&qh).map(|v| v.1.as_slice())
    }

    pub fn day(&self, offset: usize) -> NaiveDate {
        add_days(self.start, offset as i64)
    }

    /// Training rows among `days` with a finite target, in day order.
    fn rows(&self, qh: u8, days: core::ops::Range<usize>) -> Vec<usize> {
        let (_, y) = &self.per_qh[&qh];
        days.filter(|&d| d >= 1 && d < self.n_days && y[d].is_finite()).collect()
    }

    fn sample(&self, qh: u8, days: core::ops::Range<usize>) -> Sample {
        let (x, y) = &self.per_qh[&qh];
        let rows = self.rows(qh, days);
        Sample { x: x.select_rows(&rows), y: rows.iter().map(|&d| y[d]).collect() }
    }
}

/// Assembles the feature vectors of every (day >= 1, qh). Targets are the
/// panel's imbalance prices; missing targets stay NaN.
pub fn prepare(panel: &MarketPanel, book: &TradeBook, qhs: &[u8]) -> Result<Dataset> {
    let asm = FeatureAssembler::new(panel, book);
    let layout = Arc::new(asm.layout().clone());
    let p = layout.len();
    let id1_col = layout.position("ID1_qh").expect("layout has ID1_qh");
    let n = panel.n_days();
    let mut per_qh = BTreeMap::new();
    for &q in qhs {
        let mut x = Matrix::zeros(n, p);
        let mut y = vec![f64::NAN; n];
        x.row_mut(0).fill(f64::NAN);
        for d in 0..n {
            let idx = DeliveryIndex::new(panel.day(d), q)?;
            y[d] = panel.get(col::IP, idx).unwrap_or(f64::NAN);
            if d == 0 {
                continue;
            }
            let fv = asm.assemble(idx)?;
            if let Some(j) = fv.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Input(format!(
                    "feature `{}` is not finite at {idx}; clean the panel first",
                    layout.names()[j]
                )));
            }
            x.row_mut(d).copy_from_slice(&fv.values);
        }
        per_qh.insert(q, (x, y));
    }
    Ok(Dataset { start: panel.start(), n_days: n, layout, per_qh, id1_col })
}

#[derive(Clone, Debug)]
pub enum FittedModel {
    Naive(NaiveModel),
    Lasso(LassoModel),
    Gamlss(GamlssModel),
    ProbNN(ProbNNModel),
}

/// Fits `model` for quarter-hour `qh` on the panel days in `window`.
pub fn fit_window(
    data: &Dataset,
    cfg: &RollingConfig,
    model: ModelId,
    qh: u8,
    window: core::ops::Range<usize>,
    hyper: Option<&ModelHyper>,
    warm: Option<&FittedModel>,
    key: SeedKey,
) -> Result<FittedModel> {
    match model {
        ModelId::Naive => {
            let s = data.sample(qh, window);
            let id1 = s.x.column(data.id1_col);
            Ok(FittedModel::Naive(fit_naive(&id1, &s.y)?))
        }
        ModelId::Lasso => {
            let s = data.sample(qh, window);
            let cont = data.layout.continuous_columns();
            Ok(FittedModel::Lasso(fit_lasso_bic(&s.x, &s.y, &cont, &cfg.lasso)?))
        }
        ModelId::Gamlss(_) | ModelId::ProbNN(_) => {
            let split = window.start + cfg.train_days;
            let train = data.sample(qh, window.start..split);
            let val = data.sample(qh, split..window.end);
            match (hyper, warm) {
                (Some(ModelHyper::Gamlss(h)), w) => {
                    let w = match w {
                        Some(FittedModel::Gamlss(m)) => Some(m),
                        _ => None,
                    };
                    Ok(FittedModel::Gamlss(fit_gamlss(&train, &val, h, w)?))
                }
                (Some(ModelHyper::ProbNN(h)), w) => {
                    let w = match w {
                        Some(FittedModel::ProbNN(m)) => Some(m),
                        _ => None,
                    };
                    let groups: &[FeatureGroup] = data.layout.groups();
                    Ok(FittedModel::ProbNN(fit_probnn(&train, &val, h, Some(groups), key, w)?))
                }
                (None, _) => Err(Error::Config(format!("no tuned hyperparameters for {model} at qh {qh}"))),
            }
        }
    }
}

/// Point forecast and grid quantiles for one feature row.
pub fn predict(fitted: &FittedModel, row: &[f64], id1_col: usize, m: usize, key: SeedKey) -> Result<(f64, Vec<f64>)> {
    match fitted {
        FittedModel::Naive(n) => {
            let p = n.point(row[id1_col]);
            Ok((p, n.predict(row[id1_col], m, key)?))
        }
        FittedModel::Lasso(l) => l.predict(row, m, key),
        FittedModel::Gamlss(g) => {
            let d = g.predict(row)?;
            Ok((d.mean_forecast().0, dist_to_quantiles(&d)?))
        }
        FittedModel::ProbNN(p) => {
            let d = p.predict(row)?;
            Ok((d.mean_forecast().0, dist_to_quantiles(&d)?))
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ChainOutput {
    pub records: Vec<ForecastRecord>,
    pub failures: Vec<FitFailure>,
}

/// Seed of the stream used for `(model, day, qh)` and a purpose label.
pub fn stream_key(seed: u64, model: ModelId, day: NaiveDate, qh: u8, purpose: &str) -> SeedKey {
    SeedKey::new(seed)
        .with_str(&model.to_string())
        .with_str(&day.to_string())
        .with_u64(qh as u64)
        .with_str(purpose)
}

/// Runs one (model, qh) chain over all out-of-sample days.
pub fn run_chain(data: &Dataset, cfg: &RollingConfig, model: ModelId, qh: u8, hyper: Option<&ModelHyper>) -> ChainOutput {
    let d0 = cfg.in_sample_days;
    let mut out = ChainOutput::default();
    let mut current: Option<(FittedModel, usize)> = None;
    let mut due = true;
    let id = model.to_string();
    let x = data.features(qh).expect("prepared quarter-hour");
    for k in 0..cfg.out_of_sample_days {
        let t = d0 + k;
        let day = data.day(t);
        let delivery = DeliveryIndex::new(day, qh).expect("valid qh");
        if k % cfg.refit_every == 0 {
            due = true;
        }
        if due {
            let warm = current.as_ref().map(|c| &c.0);
            let key = stream_key(cfg.seed, model, day, qh, "fit");
            match fit_window(data, cfg, model, qh, t - d0..t, hyper, warm, key) {
                Ok(m) => {
                    current = Some((m, k));
                    due = false;
                }
                Err(e) => {
                    out.failures.push(FitFailure { model_id: id.clone(), delivery, message: e.to_string() });
                    continue;
                }
            }
        }
        let (fitted, window_id) = current.as_ref().expect("fitted model");
        let key = stream_key(cfg.seed, model, day, qh, "bootstrap");
        match predict(fitted, x.row(t), data.id1_col, cfg.bootstrap_draws, key) {
            Ok((mu_hat, quantiles)) => {
                let q = QuantileForecast::new(delivery, id.clone(), quantiles);
                match q {
                    Ok(q) => out.records.push(ForecastRecord {
                        model_id: id.clone(),
                        delivery,
                        mu_hat,
                        quantiles: q.values,
                        fit_date: data.day(d0 + window_id),
                        window_id: *window_id,
                    }),
                    Err(e) => out.failures.push(FitFailure { model_id: id.clone(), delivery, message: e.to_string() }),
                }
            }
            Err(e) => out.failures.push(FitFailure { model_id: id.clone(), delivery, message: e.to_string() }),
        }
    }
    out
}

/// One unit of parallel work.
#[derive(Clone, Debug)]
pub struct ChainTask {
    pub model: ModelId,
    pub qh: u8,
    pub hyper: Option<ModelHyper>,
}

/// Validates the setting and lists the (model, qh) chains in a fixed order.
pub fn plan_chains(n_days: usize, start: NaiveDate, cfg: &RollingConfig, tuned: &TunedParams) -> Result<Vec<ChainTask>> {
    cfg.validate()?;
    let need = cfg.in_sample_days + cfg.out_of_sample_days;
    if n_days < need {
        return Err(Error::InsufficientHistory(format!(
            "panel has {n_days} days but {need} are needed; first uncoverable day {}",
            add_days(start, n_days as i64)
        )));
    }
    let mut tasks = Vec::new();
    for &model in &cfg.models {
        for &qh in &cfg.qh {
            let hyper = if model.is_parametric() {
                let h = tuned.get(model, qh).ok_or_else(|| {
                    Error::Config(format!("no tuned hyperparameters for {model} at qh {qh}; run tuning first"))
                })?;
                Some(ModelHyper::decode(model, h, cfg)?)
            } else {
                None
            };
            tasks.push(ChainTask { model, qh, hyper });
        }
    }
    Ok(tasks)
}

pub fn merge_chains(outputs: Vec<ChainOutput>) -> Result<ForecastStore> {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outputs {
        records.extend(o.records);
        failures.extend(o.failures);
    }
    ForecastStore::from_records(records, failures)
}

/// Sequential rolling backtest over every planned chain.
pub fn rolling_backtest(data: &Dataset, cfg: &RollingConfig, tuned: &TunedParams) -> Result<ForecastStore> {
    let tasks = plan_chains(data.n_days, data.start, cfg, tuned)?;
    let outputs = tasks.iter().map(|t| run_chain(data, cfg, t.model, t.qh, t.hyper.as_ref())).collect();
    merge_chains(outputs)
}

/// Validation loss of `h` for (model, qh) on the initial in-sample window,
/// the only data tuning may see.
pub fn in_sample_objective(
    data: &Dataset,
    cfg: &RollingConfig,
    model: ModelId,
    qh: u8,
    h: &Hyperparams,
    key: SeedKey,
) -> Result<f64> {
    let hyper = ModelHyper::decode(model, h, cfg)?;
    match fit_window(data, cfg, model, qh, 0..cfg.in_sample_days, Some(&hyper), None, key)? {
        FittedModel::Gamlss(m) => Ok(m.best_val_nll),
        FittedModel::ProbNN(m) => Ok(m.best_val_nll),
        _ => Err(Error::Config(format!("{model} is not tunable"))),
    }
}
