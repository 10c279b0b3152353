//! Reproducible synthetic market with a stylized imbalance settlement.
//!
//! Day-ahead prices follow a seasonal shape driven by residual load plus an
//! AR(1) daily level; intraday trades drift from the auction prices towards
//! a final intraday level; the system imbalance is an AR(1) process with
//! Student-t shocks. The basic imbalance price is the net cost of the
//! activated reserve energy per unit of net balance, after which the
//! published price is pushed at least 25% and 10 EUR/MWh away from the
//! intraday index in the direction of the system state.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use chrono::NaiveDate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson, StudentT};
use serde::{Deserialize, Serialize};

use crate::calendar::{add_days, day_of_year, is_weekend, Timestamp, QH_PER_DAY};
use crate::features::TradeBook;
use crate::panel::{canonical_columns, col, reserve_column, MarketPanel, Product, Transaction};
use crate::rng::SeedKey;
use crate::{Error, Result};
#[allow(unused_imports)]
use crate::math::Float;

pub const MIN_SYNTH_DAYS: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_days: usize,
    pub start: NaiveDate,
    /// Mean day-ahead price, EUR/MWh.
    pub base_price: f64,
    pub annual_amplitude: f64,
    pub daily_amplitude: f64,
    pub noise_scale: f64,
    /// Degrees of freedom of the imbalance and settlement shocks.
    pub tail_df: f64,
    pub spike_prob: f64,
    /// Expected intraday trades per product and trading hour.
    pub txn_rate: f64,
    /// Relative growth of the balancing-price dispersion over the sample.
    pub volatility_trend: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n_days: 120,
            start: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            base_price: 60.0,
            annual_amplitude: 10.0,
            daily_amplitude: 15.0,
            noise_scale: 8.0,
            tail_df: 4.0,
            spike_prob: 0.03,
            txn_rate: 1.0,
            volatility_trend: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_days < MIN_SYNTH_DAYS {
            return Err(Error::Config(format!(
                "synthetic market needs at least {MIN_SYNTH_DAYS} days, got {}",
                self.n_days
            )));
        }
        let scales = [
            ("annual_amplitude", self.annual_amplitude),
            ("daily_amplitude", self.daily_amplitude),
            ("noise_scale", self.noise_scale),
            ("txn_rate", self.txn_rate),
            ("volatility_trend", self.volatility_trend),
        ];
        for (name, v) in scales {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if !(self.tail_df > 0.0 && self.tail_df.is_finite()) {
            return Err(Error::Config(format!("tail_df must be positive, got {}", self.tail_df)));
        }
        if !(0.0..=1.0).contains(&self.spike_prob) {
            return Err(Error::Config(format!("spike_prob {} outside [0, 1]", self.spike_prob)));
        }
        if !self.base_price.is_finite() {
            return Err(Error::Config("base_price must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthMarket {
    pub panel: MarketPanel,
    pub transactions: Vec<Transaction>,
    /// Per panel row: whether a price spike was added before settlement.
    pub spikes: Vec<bool>,
}

/// The intraday-distance condition on a published imbalance price.
pub fn distance_rule_holds(ip: f64, id_index: f64, imb: f64) -> bool {
    if imb < 0.0 {
        ip >= (1.25 * id_index).max(id_index + 10.0)
    } else if imb > 0.0 {
        ip <= (0.75 * id_index).min(id_index - 10.0)
    } else {
        true
    }
}

/// Applies the intraday-distance condition to a basic imbalance price.
pub fn apply_distance_rule(basic: f64, id_index: f64, imb: f64) -> f64 {
    if imb < 0.0 {
        basic.max(1.25 * id_index).max(id_index + 10.0)
    } else if imb > 0.0 {
        basic.min(0.75 * id_index).min(id_index - 10.0)
    } else {
        basic
    }
}

const QH: usize = QH_PER_DAY as usize;

fn std_t(rng: &mut ChaCha8Rng, t: &StudentT<f64>, df: f64) -> f64 {
    let x = t.sample(rng);
    // unit variance where the variance exists
    if df > 2.0 {
        x * ((df - 2.0) / df).sqrt()
    } else {
        x
    }
}

struct Streams {
    fundamentals: ChaCha8Rng,
    prices: ChaCha8Rng,
    trades: ChaCha8Rng,
    imbalance: ChaCha8Rng,
    reserves: ChaCha8Rng,
    fuels: ChaCha8Rng,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthMarket> {
    cfg.validate()?;
    let key = SeedKey::new(cfg.seed).with_str("synth");
    let mut s = Streams {
        fundamentals: key.with_str("fundamentals").rng(),
        prices: key.with_str("prices").rng(),
        trades: key.with_str("trades").rng(),
        imbalance: key.with_str("imbalance").rng(),
        reserves: key.with_str("reserves").rng(),
        fuels: key.with_str("fuels").rng(),
    };
    let n = cfg.n_days;
    let rows = n * QH;
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let t_dist = StudentT::new(cfg.tail_df).map_err(|e| Error::Config(e.to_string()))?;

    let mut cols: alloc::collections::BTreeMap<alloc::string::String, Vec<f64>> =
        canonical_columns().into_iter().map(|c| (c, vec![f64::NAN; rows])).collect();
    let mut put = |name: &str, row: usize, v: f64| {
        cols.get_mut(name).expect("canonical column")[row] = v;
    };

    // fundamentals and day-ahead / auction prices
    let mut level = 0.0;
    let mut wind = 0.0;
    let mut da = vec![0.0; rows];
    let mut ia = vec![0.0; rows];
    for d in 0..n {
        let day = add_days(cfg.start, d as i64);
        let doy = day_of_year(day);
        let season = (2.0 * PI * doy / 365.0).cos();
        let weekend = is_weekend(day);
        wind = 0.8 * wind + 0.6 * std_normal.sample(&mut s.fundamentals);
        let wind_factor = 1.0 / (1.0 + (-wind).exp());
        let offshore = 1.0 / (1.0 + (-(wind + 0.3 * std_normal.sample(&mut s.fundamentals))).exp());
        let cloud = 0.5 + 0.5 * s.fundamentals.random::<f64>();
        let mut residual = [0.0; QH];
        for q in 0..QH {
            let row = d * QH + q;
            let hour = q as f64 / 4.0;
            let load = 55_000.0 + 9_000.0 * (-(2.0 * PI * (hour - 2.0) / 24.0).cos()).max(-0.6)
                + 3_000.0 * season
                - if weekend { 6_000.0 } else { 0.0 }
                + 600.0 * std_normal.sample(&mut s.fundamentals);
            let wion = (28_000.0 * wind_factor * (0.85 + 0.15 * (2.0 * PI * hour / 24.0).sin())
                + 400.0 * std_normal.sample(&mut s.fundamentals))
            .max(0.0);
            let woff = (6_000.0 * offshore + 150.0 * std_normal.sample(&mut s.fundamentals)).max(0.0);
            let sun = (PI * (hour - 6.0) / 13.0).sin().max(0.0);
            let solar = (32_000.0 * sun * (0.65 - 0.35 * season) * cloud
                + 200.0 * sun * std_normal.sample(&mut s.fundamentals))
            .max(0.0);
            put(col::LOAD, row, load);
            put(col::WION, row, wion);
            put(col::WIOFF, row, woff);
            put(col::SOLAR, row, solar);
            residual[q] = load - wion - woff - solar;
        }
        level = 0.85 * level + cfg.noise_scale * 0.5 * std_normal.sample(&mut s.prices);
        for h in 0..24 {
            let rl: f64 = residual[4 * h..4 * h + 4].iter().sum::<f64>() / 4.0;
            let shape = -(2.0 * PI * (h as f64 - 3.0) / 24.0).cos() + 0.4 * (4.0 * PI * (h as f64 - 5.0) / 24.0).cos();
            let price = cfg.base_price
                + cfg.annual_amplitude * season
                + cfg.daily_amplitude * 0.5 * shape
                + 0.0012 * (rl - 30_000.0)
                + level
                + 0.3 * cfg.noise_scale * std_normal.sample(&mut s.prices);
            for k in 0..4 {
                da[d * QH + 4 * h + k] = price;
            }
        }
        for q in 0..QH {
            let row = d * QH + q;
            let h = q / 4;
            let next = da[d * QH + (4 * (h + 1)).min(QH - 1)];
            let prev = da[d * QH + (4 * h).saturating_sub(1)];
            let ramp = (q % 4) as f64 - 1.5;
            ia[row] = da[row] + 0.25 * ramp * (next - prev) + 0.25 * cfg.noise_scale * std_normal.sample(&mut s.prices);
            put(col::DA, row, da[row]);
            put(col::IA, row, ia[row]);
        }
    }

    // system imbalance; negative values mean undersupply
    let phi: f64 = 0.97;
    let mut u = 0.0;
    let mut imb = vec![0.0; rows];
    for (row, v) in imb.iter_mut().enumerate() {
        u = phi * u + (1.0 - phi * phi).sqrt() * std_t(&mut s.imbalance, &t_dist, cfg.tail_df);
        *v = 450.0 * u;
        put(col::IMB, row, *v);
    }

    // final intraday levels react partly to the imbalance
    let mut final_price = vec![0.0; rows];
    for row in 0..rows {
        final_price[row] = ia[row] - 0.012 * imb[row] + 0.5 * cfg.noise_scale * std_normal.sample(&mut s.prices);
    }

    // intraday continuous trades
    let lognormal = LogNormal::new(1.2, 0.8).expect("valid lognormal");
    let mut transactions = Vec::new();
    for d in 0..n {
        let day = add_days(cfg.start, d as i64);
        let prev_day = Timestamp::day_start(add_days(day, -1));
        let mut products: Vec<(Product, Timestamp, f64, f64)> = Vec::with_capacity(120);
        for h in 1..=24u8 {
            let r0 = d * QH + 4 * (h as usize - 1);
            let fin = final_price[r0..r0 + 4].iter().sum::<f64>() / 4.0;
            products.push((Product::Hourly(h), prev_day.plus_minutes(15 * 60), da[r0], fin));
        }
        for q in 1..=QH_PER_DAY {
            let r = d * QH + q as usize - 1;
            products.push((Product::QuarterHourly(q), prev_day.plus_minutes(16 * 60), ia[r], final_price[r]));
        }
        for (product, open, start_price, fin) in products {
            let end = product.delivery_start(day).minus_minutes(5);
            let span = (end.0 - open.0) as f64;
            let hours = span / 3600.0;
            let mean = cfg.txn_rate * hours;
            let count = if mean > 0.0 {
                Poisson::new(mean).map(|p| p.sample(&mut s.trades) as usize).unwrap_or(0)
            } else {
                0
            };
            for _ in 0..count.max(1) {
                let w: f64 = s.trades.random();
                let back = (span * w * w) as i64;
                let exec = Timestamp((end.0 - 1 - back).max(open.0));
                let frac = (exec.0 - open.0) as f64 / span;
                let price = start_price + (fin - start_price) * frac
                    + 0.3 * cfg.noise_scale * std_normal.sample(&mut s.trades);
                let volume = 0.1 + lognormal.sample(&mut s.trades);
                transactions.push(Transaction { product, delivery_day: day, exec_time: exec, price, volume });
            }
        }
    }
    transactions.sort_by(|a, b| {
        (a.delivery_day, a.product, a.exec_time).cmp(&(b.delivery_day, b.product, b.exec_time))
    });

    // published intraday indices: last 1 h, last 3 h, all trades
    let book = TradeBook::new(&transactions);
    let mut idx_qh = vec![0.0; rows];
    for d in 0..n {
        let day = add_days(cfg.start, d as i64);
        for q in 1..=QH_PER_DAY {
            let row = d * QH + q as usize - 1;
            let hourly = Product::Hourly(q.div_ceil(4));
            let quarter = Product::QuarterHourly(q);
            for (p, fallback, names) in [
                (hourly, da[row], [col::ID1_H, col::ID3_H, col::IDX_H]),
                (quarter, ia[row], [col::ID1_QH, col::ID3_QH, col::IDX_QH]),
            ] {
                let start = p.delivery_start(day);
                let idx = book.vwap_between(day, p, Timestamp(i64::MIN), start).unwrap_or(fallback);
                let id3 = book.vwap_between(day, p, start.minus_minutes(180), start).unwrap_or(idx);
                let id1 = book.vwap_between(day, p, start.minus_minutes(60), start).unwrap_or(id3);
                put(names[0], row, id1);
                put(names[1], row, id3);
                put(names[2], row, idx);
                if matches!(p, Product::QuarterHourly(_)) {
                    idx_qh[row] = idx;
                }
            }
        }
    }

    // reserve prices per four-hour block, dispersion growing over the sample
    let mut pos_band = vec![(0.0, 0.0); rows];
    let mut neg_band = vec![(0.0, 0.0); rows];
    for d in 0..n {
        let vol = 1.0 + cfg.volatility_trend * d as f64 / n as f64;
        for b in 0..6 {
            let r0 = d * QH + 16 * b;
            let block_mean = final_price[r0..r0 + 16].iter().sum::<f64>() / 16.0;
            for (ri, reserve) in ["aFRR", "mFRR"].into_iter().enumerate() {
                let premium = if ri == 0 { 1.0 } else { 1.4 };
                for side in ["POS", "NEG"] {
                    let sign = if side == "POS" { 1.0 } else { -1.0 };
                    let en_avg = block_mean
                        + sign * vol * premium * (12.0 + 0.6 * cfg.noise_scale * lognormal.sample(&mut s.reserves) / 3.0);
                    let en_lo = en_avg - vol * premium * cfg.noise_scale * (0.5 + s.reserves.random::<f64>());
                    let en_hi = en_avg + vol * premium * cfg.noise_scale * (0.5 + s.reserves.random::<f64>());
                    let cap_avg = vol * premium * (2.0 + lognormal.sample(&mut s.reserves));
                    let cap_lo = cap_avg * (0.3 + 0.5 * s.reserves.random::<f64>());
                    let cap_hi = cap_avg * (1.2 + s.reserves.random::<f64>());
                    for k in 0..16 {
                        let row = r0 + k;
                        put(&reserve_column(reserve, side, "EN", "min"), row, en_lo);
                        put(&reserve_column(reserve, side, "EN", "avg"), row, en_avg);
                        put(&reserve_column(reserve, side, "EN", "max"), row, en_hi);
                        put(&reserve_column(reserve, side, "CAP", "min"), row, cap_lo);
                        put(&reserve_column(reserve, side, "CAP", "avg"), row, cap_avg);
                        put(&reserve_column(reserve, side, "CAP", "max"), row, cap_hi);
                        if ri == 0 {
                            if side == "POS" {
                                pos_band[row] = (en_lo, en_hi);
                            } else {
                                neg_band[row] = (en_lo, en_hi);
                            }
                        }
                    }
                }
            }
        }
    }

    // settlement
    let mut spikes = vec![false; rows];
    for row in 0..rows {
        let d = row / QH;
        let vol = 1.0 + cfg.volatility_trend * d as f64 / n as f64;
        let i = imb[row];
        let (plo, phi_) = pos_band[row];
        let (nlo, nhi) = neg_band[row];
        let p_pos = plo + (phi_ - plo) * s.imbalance.random::<f64>();
        let p_neg = nlo + (nhi - nlo) * s.imbalance.random::<f64>();
        let a = i.abs();
        let (pos_act, neg_act) = if i < 0.0 { (1.1 * a, 0.1 * a) } else { (0.1 * a, 1.1 * a) };
        let net = pos_act - neg_act;
        let mut basic = if net != 0.0 {
            (pos_act * p_pos - neg_act * p_neg) / net
        } else {
            idx_qh[row]
        };
        basic += 4.0 * vol * cfg.noise_scale * std_t(&mut s.imbalance, &t_dist, cfg.tail_df);
        if s.imbalance.random::<f64>() < cfg.spike_prob {
            let direction = if i < 0.0 { 1.0 } else { -1.0 };
            basic += direction * vol * 10.0 * cfg.noise_scale * std_t(&mut s.imbalance, &t_dist, cfg.tail_df).abs();
            spikes[row] = true;
        }
        put(col::IP, row, apply_distance_rule(basic, idx_qh[row], i));
    }

    // previous-day settlement prices, not published on weekends
    let mut fuel = [90.0f64, 25.0, 65.0, 40.0];
    let vols = [0.015, 0.03, 0.02, 0.02];
    for d in 0..n {
        let day = add_days(cfg.start, d as i64);
        for (f, v) in fuel.iter_mut().zip(vols) {
            *f *= (v * std_normal.sample(&mut s.fuels)).exp();
        }
        let missing = is_weekend(day);
        for (name, value) in col::FUELS.iter().zip(fuel) {
            for q in 0..QH {
                put(name, d * QH + q, if missing { f64::NAN } else { value });
            }
        }
    }

    let mut panel = MarketPanel::new(cfg.start, n);
    for (name, values) in cols {
        panel.set_column(&name, values)?;
    }
    Ok(SynthMarket { panel, transactions, spikes })
}

/// `(violations, checked)` over the quarter-hours without a spike.
pub fn distance_rule_violations(m: &SynthMarket) -> Result<(usize, usize)> {
    let ip = m.panel.column(col::IP).ok_or_else(|| Error::Schema("IP missing".into()))?;
    let idx = m.panel.column(col::IDX_QH).ok_or_else(|| Error::Schema("IDX_qh missing".into()))?;
    let imb = m.panel.column(col::IMB).ok_or_else(|| Error::Schema("Imb missing".into()))?;
    let mut checked = 0;
    let mut bad = 0;
    for r in 0..ip.len() {
        if m.spikes[r] {
            continue;
        }
        checked += 1;
        if !distance_rule_holds(ip[r], idx[r], imb[r]) {
            bad += 1;
        }
    }
    Ok((bad, checked))
}
