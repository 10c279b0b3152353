//! Scoring rules, score tables and the Diebold-Mariano comparison.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backtest::{ForecastRecord, ForecastStore};
use crate::calendar::DeliveryIndex;
use crate::dists::std_normal_cdf;
#[allow(unused_imports)]
use crate::math::Float;
use crate::models::{grid_index, grid_prob, GRID_SIZE};
use crate::panel::{col, MarketPanel};
use crate::{Error, Result};

/// Minimum day count for the normal approximation of the DM statistic.
pub const DM_MIN_DAYS: usize = 30;

pub fn pinball(y: f64, q: f64, prob: f64) -> f64 {
    let ind = if y < q { 1.0 } else { 0.0 };
    (prob - ind) * (y - q)
}

/// Grid CRPS: mean pinball loss over the 99 grid probabilities.
pub fn crps(y: f64, quantiles: &[f64]) -> f64 {
    debug_assert_eq!(quantiles.len(), GRID_SIZE);
    quantiles.iter().enumerate().map(|(i, &q)| pinball(y, q, grid_prob(i))).sum::<f64>() / GRID_SIZE as f64
}

/// Sample CRPS `E|X - y| - E|X - X'| / 2`, computed in O(n log n) from the
/// sorted sample.
pub fn sample_crps(samples: &[f64], y: f64) -> f64 {
    let n = samples.len() as f64;
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let e1 = s.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    // sum_{i<j} (x_j - x_i) = sum_i x_i (2i - n + 1) on the sorted sample
    let pair: f64 = s.iter().enumerate().map(|(i, &x)| x * (2.0 * i as f64 - n + 1.0)).sum();
    e1 - pair / (n * n)
}

/// Whether `y` lies strictly inside the central `level` interval.
pub fn covered(y: f64, quantiles: &[f64], level: u32) -> bool {
    let lo = grid_index((100 - level) as f64 / 200.0).expect("level on grid");
    let hi = grid_index((100 + level) as f64 / 200.0).expect("level on grid");
    quantiles[lo] < y && y < quantiles[hi]
}

fn median_of(quantiles: &[f64]) -> f64 {
    quantiles[grid_index(0.5).expect("median on grid")]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub model_id: String,
    pub n: usize,
    pub crps: f64,
    pub mae: f64,
    pub rmse: f64,
    pub cov50: f64,
    pub cov90: f64,
    pub cov98: f64,
    /// Mean CRPS per quarter-hour.
    pub crps_by_qh: BTreeMap<u8, f64>,
    /// Mean pinball loss per grid probability.
    pub pinball_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub models: Vec<ModelScores>,
}

impl ScoreTable {
    pub fn get(&self, model_id: &str) -> Option<&ModelScores> {
        self.models.iter().find(|m| m.model_id == model_id)
    }
}

/// Truth lookup on a panel's imbalance price column.
pub fn panel_truth(panel: &MarketPanel) -> impl Fn(DeliveryIndex) -> Option<f64> + '_ {
    move |idx| panel.get(col::IP, idx).filter(|v| v.is_finite())
}

fn truths_for<'a>(
    records: &[&'a ForecastRecord],
    truth: &impl Fn(DeliveryIndex) -> Option<f64>,
) -> Result<Vec<(&'a ForecastRecord, f64)>> {
    let mut out = Vec::with_capacity(records.len());
    let mut missing = Vec::new();
    for r in records {
        match truth(r.delivery) {
            Some(y) => out.push((*r, y)),
            None => missing.push(r.delivery),
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        let first = missing.iter().take(5).map(|d| d.to_string()).collect::<Vec<_>>().join(", ");
        return Err(Error::MissingTruth { count: missing.len(), first });
    }
    Ok(out)
}

pub fn score_model(
    model_id: &str,
    records: &[&ForecastRecord],
    truth: &impl Fn(DeliveryIndex) -> Option<f64>,
) -> Result<ModelScores> {
    if records.is_empty() {
        return Err(Error::Input(format!("no forecasts for {model_id}")));
    }
    let pairs = truths_for(records, truth)?;
    let n = pairs.len() as f64;
    let mut s = ModelScores {
        model_id: model_id.to_string(),
        n: pairs.len(),
        crps: 0.0,
        mae: 0.0,
        rmse: 0.0,
        cov50: 0.0,
        cov90: 0.0,
        cov98: 0.0,
        crps_by_qh: BTreeMap::new(),
        pinball_curve: vec![0.0; GRID_SIZE],
    };
    let mut by_qh: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
    let mut sse = 0.0;
    for (r, y) in &pairs {
        let c = crps(*y, &r.quantiles);
        s.crps += c;
        s.mae += (y - median_of(&r.quantiles)).abs();
        sse += (y - r.mu_hat) * (y - r.mu_hat);
        s.cov50 += covered(*y, &r.quantiles, 50) as u8 as f64;
        s.cov90 += covered(*y, &r.quantiles, 90) as u8 as f64;
        s.cov98 += covered(*y, &r.quantiles, 98) as u8 as f64;
        for (i, q) in r.quantiles.iter().enumerate() {
            s.pinball_curve[i] += pinball(*y, *q, grid_prob(i));
        }
        let e = by_qh.entry(r.delivery.qh()).or_insert((0.0, 0));
        e.0 += c;
        e.1 += 1;
    }
    s.crps /= n;
    s.mae /= n;
    s.rmse = (sse / n).sqrt();
    s.cov50 /= n;
    s.cov90 /= n;
    s.cov98 /= n;
    s.pinball_curve.iter_mut().for_each(|v| *v /= n);
    s.crps_by_qh = by_qh.into_iter().map(|(q, (c, k))| (q, c / k as f64)).collect();
    Ok(s)
}

/// Scores every model in the store, in model-id order.
pub fn score_table(store: &ForecastStore, truth: impl Fn(DeliveryIndex) -> Option<f64>) -> Result<ScoreTable> {
    let mut models = Vec::new();
    for id in store.model_ids() {
        let recs: Vec<&ForecastRecord> = store.records_for(&id).collect();
        models.push(score_model(&id, &recs, &truth)?);
    }
    Ok(ScoreTable { models })
}

/// Per-day CRPS vectors of one model, ordered by quarter-hour.
pub fn daily_losses(
    store: &ForecastStore,
    model_id: &str,
    truth: impl Fn(DeliveryIndex) -> Option<f64>,
) -> Result<BTreeMap<NaiveDate, Vec<(u8, f64)>>> {
    let recs: Vec<&ForecastRecord> = store.records_for(model_id).collect();
    let pairs = truths_for(&recs, &truth)?;
    let mut out: BTreeMap<NaiveDate, Vec<(u8, f64)>> = BTreeMap::new();
    for (r, y) in pairs {
        out.entry(r.delivery.day()).or_default().push((r.delivery.qh(), crps(y, &r.quantiles)));
    }
    for v in out.values_mut() {
        v.sort_by_key(|x| x.0);
    }
    Ok(out)
}

/// Aligns two models' daily losses on the days where both cover the same
/// quarter-hours.
pub fn align_losses(
    a: &BTreeMap<NaiveDate, Vec<(u8, f64)>>,
    b: &BTreeMap<NaiveDate, Vec<(u8, f64)>>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut la = Vec::new();
    let mut lb = Vec::new();
    for (day, va) in a {
        let Some(vb) = b.get(day) else { continue };
        let qa: Vec<u8> = va.iter().map(|x| x.0).collect();
        let qb: Vec<u8> = vb.iter().map(|x| x.0).collect();
        if qa != qb {
            continue;
        }
        la.push(va.iter().map(|x| x.1).collect());
        lb.push(vb.iter().map(|x| x.1).collect());
    }
    (la, lb)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    /// p-value of the one-sided test whose alternative is "A has lower loss".
    pub p_a_better: f64,
    /// p-value of the one-sided test whose alternative is "B has lower loss".
    pub p_b_better: f64,
    pub mean_diff: f64,
    pub n: usize,
    /// Zero-variance differential with nonzero mean.
    pub degenerate: bool,
    /// Fewer than `DM_MIN_DAYS` days.
    pub small_sample: bool,
}

/// DM test on the differential `sum_qh |L_A| - sum_qh |L_B|` per day.
pub fn dm_test(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DmResult> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!("{} vs {} days", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Input("the DM test needs at least 2 days".into()));
    }
    let mut delta = Vec::with_capacity(a.len());
    for (la, lb) in a.iter().zip(b) {
        if la.len() != lb.len() {
            return Err(Error::GridMismatch("per-day loss vectors differ in length".into()));
        }
        let sa: f64 = la.iter().map(|v| v.abs()).sum();
        let sb: f64 = lb.iter().map(|v| v.abs()).sum();
        delta.push(sa - sb);
    }
    Ok(dm_from_differential(&delta))
}

pub fn dm_from_differential(delta: &[f64]) -> DmResult {
    let n = delta.len();
    let nf = n as f64;
    let mean = delta.iter().sum::<f64>() / nf;
    let var = delta.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (nf - 1.0);
    let small_sample = n < DM_MIN_DAYS;
    if var <= 0.0 || !var.is_finite() {
        if mean == 0.0 {
            return DmResult {
                statistic: 0.0,
                p_a_better: 0.5,
                p_b_better: 0.5,
                mean_diff: 0.0,
                n,
                degenerate: false,
                small_sample,
            };
        }
        let stat = if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        let p_a = if mean > 0.0 { 1.0 } else { 0.0 };
        return DmResult {
            statistic: stat,
            p_a_better: p_a,
            p_b_better: 1.0 - p_a,
            mean_diff: mean,
            n,
            degenerate: true,
            small_sample,
        };
    }
    let stat = mean / (var / nf).sqrt();
    let p_a = std_normal_cdf(stat);
    DmResult {
        statistic: stat,
        p_a_better: p_a,
        p_b_better: 1.0 - p_a,
        mean_diff: mean,
        n,
        degenerate: false,
        small_sample,
    }
}

/// Pairwise p-values: entry `[i][j]` is the p-value of the test whose
/// alternative is "model `j` (column) beats model `i` (row)". The diagonal
/// is 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmMatrix {
    pub models: Vec<String>,
    pub p_values: Vec<Vec<f64>>,
    pub results: Vec<Vec<Option<DmResult>>>,
}

pub fn dm_matrix(
    store: &ForecastStore,
    models: &[String],
    truth: impl Fn(DeliveryIndex) -> Option<f64>,
) -> Result<DmMatrix> {
    let losses = models.iter().map(|m| daily_losses(store, m, &truth)).collect::<Result<Vec<_>>>()?;
    let k = models.len();
    let mut p_values = vec![vec![0.5; k]; k];
    let mut results = vec![vec![None; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let (li, lj) = align_losses(&losses[i], &losses[j]);
            let r = dm_test(&li, &lj)?;
            p_values[i][j] = r.p_b_better;
            results[i][j] = Some(r);
        }
    }
    Ok(DmMatrix { models: models.to_vec(), p_values, results })
}
