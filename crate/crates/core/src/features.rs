//! Causal feature construction.
//!
//! Every value of a [`FeatureVector`] for delivery `(d, qh)` is computed from
//! data observable strictly before the cutoff `delivery start - 30 min`:
//! day-ahead quantities of days `d` and `d - 1`, settled imbalance values of
//! quarter-hours `qh - 4 ..= qh - 7`, reserve prices, previous-day fuel
//! prices, calendar terms, and intraday trades executed before the cutoff.
//!
//! Layout (947 features):
//!
//! | block | count |
//! |---|---|
//! | `DA_h`, `IA_qh`, `ID1_h`, `ID3_h`, `IDX_h`, `ID1_qh`, `ID3_qh`, `IDX_qh` | 8 |
//! | `VWAP15_hNN` for the 24 hourly products of day `d` | 24 |
//! | `VWAP15_qhNN` for the 96 quarter-hourly products of day `d` | 96 |
//! | `dID5_x`, x = 30, 35, ..., 55 | 6 |
//! | `Load/WiOn/WiOff/Solar_qhNN` of day `d` | 384 |
//! | `Load/WiOn/WiOff/Solar_prev_qhNN` of day `d - 1` | 384 |
//! | `Imb_lag4` .. `Imb_lag7` | 4 |
//! | `aFRR_*`, `mFRR_*` | 24 |
//! | `Coal_prev`, `Gas_prev`, `Oil_prev`, `EUA_prev` | 4 |
//! | `DoW_1` .. `DoW_7` (Monday first) | 7 |
//! | `Spline_1` .. `Spline_6` | 6 |
//!
//! Intraday indices at the cutoff: `ID1` is the VWAP over the hour before the
//! cutoff, `ID3` over the three hours before it, `IDX` over all trades before
//! it. `VWAP15` is the VWAP over the 15 minutes before the cutoff. Empty
//! windows fall back to the most recent non-empty window of the same length
//! for that product, then to the day-ahead price.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{add_days, day_of_year, weekday_index, DeliveryIndex, Timestamp, QH_PER_DAY};
use crate::panel::{col, reserve_columns, MarketPanel, Product, Transaction};
use crate::{Error, Result};

/// Trades of one product, sorted by execution time.
#[derive(Clone, Debug, Default)]
struct Trades {
    times: Vec<Timestamp>,
    price: Vec<f64>,
    volume: Vec<f64>,
}

/// Transactions indexed by (delivery day, product) for window queries.
#[derive(Clone, Debug, Default)]
pub struct TradeBook {
    products: BTreeMap<(NaiveDate, Product), Trades>,
}

impl TradeBook {
    pub fn new(txns: &[Transaction]) -> Self {
        let mut grouped: BTreeMap<(NaiveDate, Product), Vec<(Timestamp, f64, f64)>> = BTreeMap::new();
        for t in txns {
            grouped
                .entry((t.delivery_day, t.product))
                .or_default()
                .push((t.exec_time, t.price, t.volume));
        }
        let products = grouped
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_by(|a, b| {
                    a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2))
                });
                let trades = Trades {
                    times: v.iter().map(|t| t.0).collect(),
                    price: v.iter().map(|t| t.1).collect(),
                    volume: v.iter().map(|t| t.2).collect(),
                };
                (k, trades)
            })
            .collect();
        TradeBook { products }
    }

    pub fn len(&self) -> usize {
        self.products.values().map(|t| t.times.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    /// VWAP of trades with execution time in `[from, to)`.
    pub fn vwap_between(&self, day: NaiveDate, product: Product, from: Timestamp, to: Timestamp) -> Option<f64> {
        let tr = self.products.get(&(day, product))?;
        let lo = tr.times.partition_point(|t| *t < from);
        let hi = tr.times.partition_point(|t| *t < to);
        if hi <= lo {
            return None;
        }
        let mut pv = 0.0;
        let mut v = 0.0;
        for i in lo..hi {
            pv += tr.price[i] * tr.volume[i];
            v += tr.volume[i];
        }
        Some(pv / v)
    }

    /// Execution time of the last trade strictly before `t`.
    fn last_trade_before(&self, day: NaiveDate, product: Product, t: Timestamp) -> Option<Timestamp> {
        let tr = self.products.get(&(day, product))?;
        let i = tr.times.partition_point(|x| *x < t);
        (i > 0).then(|| tr.times[i - 1])
    }

    /// VWAP over `[end - width, end)`, or over the latest earlier window of
    /// the same width (aligned on `end`) that contains a trade.
    pub fn last_window_vwap(&self, day: NaiveDate, product: Product, end: Timestamp, width_min: i64) -> Option<f64> {
        let last = self.last_trade_before(day, product, end)?;
        let width = width_min * 60;
        let k = (end.0 - 1 - last.0) / width;
        let to = Timestamp(end.0 - k * width);
        self.vwap_between(day, product, Timestamp(to.0 - width), to)
    }
}

/// `xIDy`: VWAP over `[start - (x + y), start - x)` minutes before the
/// product's delivery start; `None` when no trade qualifies.
pub fn vwap_index(book: &TradeBook, day: NaiveDate, product: Product, x_min: i64, y_min: i64) -> Option<f64> {
    debug_assert!(x_min >= 0 && y_min > 0);
    let start = product.delivery_start(day);
    book.vwap_between(day, product, start.minus_minutes(x_min + y_min), start.minus_minutes(x_min))
}

pub const N_SPLINES: usize = 6;
pub const SPLINE_PERIOD: f64 = 365.0;

fn rem_euclid(x: f64, m: f64) -> f64 {
    let r = x % m;
    if r >= 0.0 {
        r
    } else if r + m < m {
        r + m
    } else {
        0.0
    }
}

/// Uniform cardinal cubic B-spline supported on [0, 4).
fn cardinal_cubic(u: f64) -> f64 {
    if !(0.0..4.0).contains(&u) {
        0.0
    } else if u < 1.0 {
        u * u * u / 6.0
    } else if u < 2.0 {
        (-3.0 * u * u * u + 12.0 * u * u - 12.0 * u + 4.0) / 6.0
    } else if u < 3.0 {
        (3.0 * u * u * u - 24.0 * u * u + 60.0 * u - 44.0) / 6.0
    } else {
        let w = 4.0 - u;
        w * w * w / 6.0
    }
}

/// Cubic periodic B-spline basis with `N_SPLINES` equidistant knots on the
/// annual circle; basis `i` starts its support at knot `i`.
pub fn periodic_bspline_basis(day_of_year: f64) -> [f64; N_SPLINES] {
    let h = SPLINE_PERIOD / N_SPLINES as f64;
    let t = rem_euclid(day_of_year, SPLINE_PERIOD) / h;
    let mut out = [0.0; N_SPLINES];
    for (i, o) in out.iter_mut().enumerate() {
        let u = rem_euclid(t - i as f64, N_SPLINES as f64);
        *o = cardinal_cubic(u);
    }
    out
}

/// One-hot weekday encoding, Monday first.
pub fn weekday_dummies(day: NaiveDate) -> [f64; 7] {
    let mut out = [0.0; 7];
    out[weekday_index(day)] = 1.0;
    out
}

/// The 20 selectable feature groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureGroup {
    DayAhead,
    IntradayAuction,
    Id1Hourly,
    Id3Hourly,
    IdxHourly,
    Id1Quarter,
    Id3Quarter,
    IdxQuarter,
    Vwap15Hourly,
    Vwap15Quarter,
    IntradayDiffs,
    Fundamentals,
    FundamentalsPrevDay,
    ImbalanceLags,
    Afrr,
    Mfrr,
    Fuels,
    Emissions,
    Weekday,
    Splines,
}

impl FeatureGroup {
    pub const COUNT: usize = 20;

    pub const ALL: [FeatureGroup; 20] = [
        FeatureGroup::DayAhead,
        FeatureGroup::IntradayAuction,
        FeatureGroup::Id1Hourly,
        FeatureGroup::Id3Hourly,
        FeatureGroup::IdxHourly,
        FeatureGroup::Id1Quarter,
        FeatureGroup::Id3Quarter,
        FeatureGroup::IdxQuarter,
        FeatureGroup::Vwap15Hourly,
        FeatureGroup::Vwap15Quarter,
        FeatureGroup::IntradayDiffs,
        FeatureGroup::Fundamentals,
        FeatureGroup::FundamentalsPrevDay,
        FeatureGroup::ImbalanceLags,
        FeatureGroup::Afrr,
        FeatureGroup::Mfrr,
        FeatureGroup::Fuels,
        FeatureGroup::Emissions,
        FeatureGroup::Weekday,
        FeatureGroup::Splines,
    ];

    pub fn position(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::DayAhead => "da",
            FeatureGroup::IntradayAuction => "ia",
            FeatureGroup::Id1Hourly => "id1_h",
            FeatureGroup::Id3Hourly => "id3_h",
            FeatureGroup::IdxHourly => "idx_h",
            FeatureGroup::Id1Quarter => "id1_qh",
            FeatureGroup::Id3Quarter => "id3_qh",
            FeatureGroup::IdxQuarter => "idx_qh",
            FeatureGroup::Vwap15Hourly => "vwap15_h",
            FeatureGroup::Vwap15Quarter => "vwap15_qh",
            FeatureGroup::IntradayDiffs => "id_diffs",
            FeatureGroup::Fundamentals => "fundamentals",
            FeatureGroup::FundamentalsPrevDay => "fundamentals_prev",
            FeatureGroup::ImbalanceLags => "imbalance_lags",
            FeatureGroup::Afrr => "afrr",
            FeatureGroup::Mfrr => "mfrr",
            FeatureGroup::Fuels => "fuels",
            FeatureGroup::Emissions => "eua",
            FeatureGroup::Weekday => "weekday",
            FeatureGroup::Splines => "splines",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|g| g.name() == name)
    }

    /// Groups whose values are prices or volumes (asinh-transformable), as
    /// opposed to calendar terms.
    pub fn is_continuous(self) -> bool {
        !matches!(self, FeatureGroup::Weekday | FeatureGroup::Splines)
    }
}

/// Which feature groups to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroupMask(pub [bool; FeatureGroup::COUNT]);

impl FeatureGroupMask {
    pub fn all() -> Self {
        FeatureGroupMask([true; FeatureGroup::COUNT])
    }

    pub fn none() -> Self {
        FeatureGroupMask([false; FeatureGroup::COUNT])
    }

    pub fn only(groups: &[FeatureGroup]) -> Self {
        let mut m = Self::none();
        for g in groups {
            m.0[g.position()] = true;
        }
        m
    }

    pub fn includes(&self, g: FeatureGroup) -> bool {
        self.0[g.position()]
    }

    pub fn set(&mut self, g: FeatureGroup, on: bool) {
        self.0[g.position()] = on;
    }
}

/// Names and groups of the full feature vector, in order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLayout {
    names: Vec<String>,
    groups: Vec<FeatureGroup>,
}

pub const N_FEATURES: usize = 947;
pub const DIFF_OFFSETS: [i64; 6] = [30, 35, 40, 45, 50, 55];
pub const IMB_LAGS: [u32; 4] = [4, 5, 6, 7];

impl FeatureLayout {
    pub fn full() -> Self {
        use FeatureGroup as G;
        let mut names = Vec::with_capacity(N_FEATURES);
        let mut groups = Vec::with_capacity(N_FEATURES);
        let mut push = |n: String, g: FeatureGroup| {
            names.push(n);
            groups.push(g);
        };
        for (n, g) in [
            ("DA_h", G::DayAhead),
            ("IA_qh", G::IntradayAuction),
            ("ID1_h", G::Id1Hourly),
            ("ID3_h", G::Id3Hourly),
            ("IDX_h", G::IdxHourly),
            ("ID1_qh", G::Id1Quarter),
            ("ID3_qh", G::Id3Quarter),
            ("IDX_qh", G::IdxQuarter),
        ] {
            push(n.into(), g);
        }
        for h in 1..=24 {
            push(format!("VWAP15_h{h:02}"), G::Vwap15Hourly);
        }
        for q in 1..=96 {
            push(format!("VWAP15_qh{q:02}"), G::Vwap15Quarter);
        }
        for x in DIFF_OFFSETS {
            push(format!("dID5_{x}"), G::IntradayDiffs);
        }
        for f in col::FUNDAMENTALS {
            for q in 1..=96 {
                push(format!("{f}_qh{q:02}"), G::Fundamentals);
            }
        }
        for f in col::FUNDAMENTALS {
            for q in 1..=96 {
                push(format!("{f}_prev_qh{q:02}"), G::FundamentalsPrevDay);
            }
        }
        for l in IMB_LAGS {
            push(format!("Imb_lag{l}"), G::ImbalanceLags);
        }
        for c in reserve_columns("aFRR") {
            push(c, G::Afrr);
        }
        for c in reserve_columns("mFRR") {
            push(c, G::Mfrr);
        }
        for f in [col::COAL, col::GAS, col::OIL] {
            push(format!("{f}_prev"), G::Fuels);
        }
        push(format!("{}_prev", col::EUA), G::Emissions);
        for i in 1..=7 {
            push(format!("DoW_{i}"), G::Weekday);
        }
        for i in 1..=N_SPLINES {
            push(format!("Spline_{i}"), G::Splines);
        }
        FeatureLayout { names, groups }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Indices of the features kept by `mask`, in layout order.
    pub fn mask_indices(&self, mask: &FeatureGroupMask) -> Vec<usize> {
        (0..self.len()).filter(|&i| mask.includes(self.groups[i])).collect()
    }

    pub fn continuous_columns(&self) -> Vec<bool> {
        self.groups.iter().map(|g| g.is_continuous()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub names: Arc<Vec<String>>,
    pub cutoff: Timestamp,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// Keeps the features whose group flag is set, preserving order.
pub fn apply_group_mask(fv: &FeatureVector, layout: &FeatureLayout, mask: &FeatureGroupMask) -> Result<FeatureVector> {
    if fv.len() != layout.len() {
        return Err(Error::LayoutMismatch { expected: layout.len(), got: fv.len() });
    }
    let idx = layout.mask_indices(mask);
    Ok(FeatureVector {
        values: idx.iter().map(|&i| fv.values[i]).collect(),
        names: Arc::new(idx.iter().map(|&i| layout.names[i].clone()).collect()),
        cutoff: fv.cutoff,
    })
}

/// Builds feature vectors from one panel and one trade book.
#[derive(Debug)]
pub struct FeatureAssembler<'a> {
    panel: &'a MarketPanel,
    book: &'a TradeBook,
    layout: FeatureLayout,
    names: Arc<Vec<String>>,
    reserve_cols: Vec<String>,
}

/// How many days back a missing previous-day fuel price is forward-filled.
const FUEL_LOOKBACK_DAYS: i64 = 7;

impl<'a> FeatureAssembler<'a> {
    pub fn new(panel: &'a MarketPanel, book: &'a TradeBook) -> Self {
        let layout = FeatureLayout::full();
        let names = Arc::new(layout.names.clone());
        let mut reserve_cols = reserve_columns("aFRR");
        reserve_cols.extend(reserve_columns("mFRR"));
        FeatureAssembler { panel, book, layout, names, reserve_cols }
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    fn panel_value(&self, name: &str, idx: DeliveryIndex) -> f64 {
        self.panel.get(name, idx).unwrap_or(f64::NAN)
    }

    fn day_ahead(&self, day: NaiveDate, product: Product) -> f64 {
        let qh = match product {
            Product::Hourly(h) => 4 * h - 3,
            Product::QuarterHourly(q) => q,
        };
        DeliveryIndex::new(day, qh).map_or(f64::NAN, |i| self.panel_value(col::DA, i))
    }

    /// VWAP over `[cutoff - width, cutoff)`, falling back to the latest
    /// earlier non-empty window, then to the day-ahead price.
    fn recent_vwap(&self, day: NaiveDate, product: Product, end: Timestamp, width_min: i64) -> f64 {
        self.book
            .last_window_vwap(day, product, end, width_min)
            .unwrap_or_else(|| self.day_ahead(day, product))
    }

    /// VWAP of all trades before the cutoff, falling back to the day-ahead price.
    fn full_vwap(&self, day: NaiveDate, product: Product, cutoff: Timestamp) -> f64 {
        self.book
            .vwap_between(day, product, Timestamp(i64::MIN), cutoff)
            .unwrap_or_else(|| self.day_ahead(day, product))
    }

    fn fuel_prev(&self, name: &str, day: NaiveDate) -> f64 {
        for back in 1..=FUEL_LOOKBACK_DAYS {
            let d = add_days(day, -back);
            if let Ok(i) = DeliveryIndex::new(d, 1) {
                if let Some(v) = self.panel.get(name, i) {
                    return v;
                }
            }
        }
        f64::NAN
    }

    pub fn assemble(&self, delivery: DeliveryIndex) -> Result<FeatureVector> {
        let day = delivery.day();
        let prev = add_days(day, -1);
        if !self.panel.contains_day(day) {
            return Err(Error::InsufficientHistory(format!("day {day} absent from panel")));
        }
        if !self.panel.contains_day(prev) {
            return Err(Error::InsufficientHistory(format!(
                "previous day {prev} needed for {delivery} is absent from panel"
            )));
        }
        let cutoff = delivery.cutoff();
        let hp = Product::Hourly(delivery.hour());
        let qp = Product::QuarterHourly(delivery.qh());
        let mut v = Vec::with_capacity(N_FEATURES);

        v.push(self.panel_value(col::DA, delivery));
        v.push(self.panel_value(col::IA, delivery));
        for p in [hp, qp] {
            v.push(self.recent_vwap(day, p, cutoff, 60));
            v.push(self.recent_vwap(day, p, cutoff, 180));
            v.push(self.full_vwap(day, p, cutoff));
        }

        for h in 1..=24 {
            v.push(self.recent_vwap(day, Product::Hourly(h), cutoff, 15));
        }
        for q in 1..=QH_PER_DAY {
            v.push(self.recent_vwap(day, Product::QuarterHourly(q), cutoff, 15));
        }

        let start = delivery.start();
        for x in DIFF_OFFSETS {
            let near = self.recent_vwap(day, qp, start.minus_minutes(x), 5);
            let far = self.recent_vwap(day, qp, start.minus_minutes(x + 5), 5);
            v.push(near - far);
        }

        for d in [day, prev] {
            for f in col::FUNDAMENTALS {
                for q in 1..=QH_PER_DAY {
                    let i = DeliveryIndex::new(d, q).expect("valid qh");
                    v.push(self.panel_value(f, i));
                }
            }
        }

        for lag in IMB_LAGS {
            v.push(self.panel_value(col::IMB, delivery.lagged(lag)));
        }
        for c in &self.reserve_cols {
            v.push(self.panel_value(c, delivery));
        }
        for f in col::FUELS {
            v.push(self.fuel_prev(f, day));
        }
        v.extend_from_slice(&weekday_dummies(day));
        v.extend_from_slice(&periodic_bspline_basis(day_of_year(day)));

        debug_assert_eq!(v.len(), N_FEATURES);
        Ok(FeatureVector { values: v, names: self.names.clone(), cutoff })
    }
}

/// Assembles the full feature vector for one delivery.
pub fn assemble_features(panel: &MarketPanel, book: &TradeBook, delivery: DeliveryIndex) -> Result<FeatureVector> {
    FeatureAssembler::new(panel, book).assemble(delivery)
}
