//! Quarter-hourly market panel and intraday transactions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{add_days, days_between, DeliveryIndex, Timestamp, QH_PER_DAY};
use crate::{Error, Result};

/// Canonical column names.
pub mod col {
    pub const IP: &str = "IP";
    pub const DA: &str = "DA";
    pub const IA: &str = "IA";
    pub const ID1_H: &str = "ID1_h";
    pub const ID3_H: &str = "ID3_h";
    pub const IDX_H: &str = "IDX_h";
    pub const ID1_QH: &str = "ID1_qh";
    pub const ID3_QH: &str = "ID3_qh";
    pub const IDX_QH: &str = "IDX_qh";
    pub const LOAD: &str = "Load";
    pub const WION: &str = "WiOn";
    pub const WIOFF: &str = "WiOff";
    pub const SOLAR: &str = "Solar";
    pub const IMB: &str = "Imb";
    pub const COAL: &str = "Coal";
    pub const GAS: &str = "Gas";
    pub const OIL: &str = "Oil";
    pub const EUA: &str = "EUA";

    pub const FUNDAMENTALS: [&str; 4] = [LOAD, WION, WIOFF, SOLAR];
    pub const FUELS: [&str; 4] = [COAL, GAS, OIL, EUA];
    pub const PRICE_INDICES: [&str; 6] = [ID1_H, ID3_H, IDX_H, ID1_QH, ID3_QH, IDX_QH];
}

pub const RESERVES: [&str; 2] = ["aFRR", "mFRR"];
pub const SIDES: [&str; 2] = ["POS", "NEG"];
pub const KINDS: [&str; 2] = ["CAP", "EN"];
pub const STATS: [&str; 3] = ["min", "avg", "max"];

pub fn reserve_column(reserve: &str, side: &str, kind: &str, stat: &str) -> String {
    format!("{reserve}_{side}_{kind}_{stat}")
}

/// The 12 balancing-price columns of one reserve product, in canonical order.
pub fn reserve_columns(reserve: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(12);
    for side in SIDES {
        for kind in KINDS {
            for stat in STATS {
                out.push(reserve_column(reserve, side, kind, stat));
            }
        }
    }
    out
}

/// All known columns in CSV order.
pub fn canonical_columns() -> Vec<String> {
    let mut out: Vec<String> = [col::IP, col::DA, col::IA]
        .iter()
        .chain(col::PRICE_INDICES.iter())
        .chain(col::FUNDAMENTALS.iter())
        .chain([col::IMB].iter())
        .map(|s| s.to_string())
        .collect();
    for r in RESERVES {
        out.extend(reserve_columns(r));
    }
    out.extend(col::FUELS.iter().map(|s| s.to_string()));
    out
}

pub const MANDATORY_COLUMNS: [&str; 2] = [col::IP, col::DA];

/// Columns holding one value per day (previous-day settlement prices).
pub fn is_daily_column(name: &str) -> bool {
    col::FUELS.contains(&name)
}

/// Aligned quarter-hourly table keyed by [`DeliveryIndex`].
///
/// Rows form a contiguous grid of `n_days * 96` entries starting at `start`
/// (row = day offset * 96 + qh - 1). Missing values are stored as NaN.
/// Equality compares values bit by bit, so two missing cells are equal.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarketPanel {
    start: NaiveDate,
    n_days: usize,
    columns: BTreeMap<String, Vec<f64>>,
}

impl PartialEq for MarketPanel {
    fn eq(&self, other: &Self) -> bool {
        self.start == other.start
            && self.n_days == other.n_days
            && self.columns.len() == other.columns.len()
            && self.columns.iter().zip(&other.columns).all(|((ka, va), (kb, vb))| {
                ka == kb && va.len() == vb.len() && va.iter().zip(vb).all(|(a, b)| a.to_bits() == b.to_bits())
            })
    }
}

impl MarketPanel {
    pub fn new(start: NaiveDate, n_days: usize) -> Self {
        MarketPanel { start, n_days, columns: BTreeMap::new() }
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        add_days(self.start, self.n_days as i64 - 1)
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_rows(&self) -> usize {
        self.n_days * QH_PER_DAY as usize
    }

    pub fn day(&self, offset: usize) -> NaiveDate {
        add_days(self.start, offset as i64)
    }

    pub fn day_offset(&self, day: NaiveDate) -> Option<usize> {
        let off = days_between(self.start, day);
        (off >= 0 && (off as usize) < self.n_days).then_some(off as usize)
    }

    pub fn contains_day(&self, day: NaiveDate) -> bool {
        self.day_offset(day).is_some()
    }

    pub fn row_of(&self, idx: DeliveryIndex) -> Option<usize> {
        self.day_offset(idx.day()).map(|d| d * QH_PER_DAY as usize + idx.qh() as usize - 1)
    }

    pub fn index_of(&self, row: usize) -> DeliveryIndex {
        let q = QH_PER_DAY as usize;
        DeliveryIndex::new(self.day(row / q), (row % q + 1) as u8).expect("row within grid")
    }

    pub fn indices(&self) -> impl Iterator<Item = DeliveryIndex> + '_ {
        (0..self.n_rows()).map(move |r| self.index_of(r))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(|s| s.as_str())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(|v| v.as_slice())
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.columns.get_mut(name)
    }

    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::Integrity(format!(
                "column {name} has {} values, grid has {}",
                values.len(),
                self.n_rows()
            )));
        }
        self.columns.insert(name.to_string(), values);
        Ok(())
    }

    pub fn remove_column(&mut self, name: &str) -> Option<Vec<f64>> {
        self.columns.remove(name)
    }

    /// Value at a delivery; `None` when the column, the day, or the value is missing.
    pub fn get(&self, name: &str, idx: DeliveryIndex) -> Option<f64> {
        let row = self.row_of(idx)?;
        let v = *self.columns.get(name)?.get(row)?;
        (!v.is_nan()).then_some(v)
    }

    pub fn set(&mut self, name: &str, idx: DeliveryIndex, v: f64) -> Result<()> {
        let row = self
            .row_of(idx)
            .ok_or_else(|| Error::Input(format!("{idx} outside the panel")))?;
        let n = self.n_rows();
        let c = self.columns.entry(name.to_string()).or_insert_with(|| vec![f64::NAN; n]);
        c[row] = v;
        Ok(())
    }

    pub fn missing_count(&self, name: &str) -> usize {
        self.column(name).map_or(0, |c| c.iter().filter(|v| v.is_nan()).count())
    }

    /// Checks finiteness of non-missing prices and the reserve-price ordering.
    pub fn validate(&self) -> Result<()> {
        for name in MANDATORY_COLUMNS {
            if !self.has_column(name) {
                return Err(Error::Schema(format!("mandatory column {name} absent")));
            }
        }
        for (name, values) in &self.columns {
            if let Some(row) = values.iter().position(|v| v.is_infinite()) {
                return Err(Error::Integrity(format!(
                    "non-finite value in {name} at {}",
                    self.index_of(row)
                )));
            }
        }
        for reserve in RESERVES {
            for side in SIDES {
                for kind in KINDS {
                    let get = |stat| self.column(&reserve_column(reserve, side, kind, stat));
                    if let (Some(lo), Some(av), Some(hi)) = (get("min"), get("avg"), get("max")) {
                        for row in 0..self.n_rows() {
                            let (a, b, c) = (lo[row], av[row], hi[row]);
                            if !(a.is_nan() || b.is_nan() || c.is_nan()) && !(a <= b && b <= c) {
                                return Err(Error::Integrity(format!(
                                    "{reserve}_{side}_{kind} min/avg/max out of order at {}",
                                    self.index_of(row)
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Restricts the panel to the day offsets `[from, to)`.
    pub fn slice_days(&self, from: usize, to: usize) -> MarketPanel {
        let q = QH_PER_DAY as usize;
        let to = to.min(self.n_days);
        let columns = self
            .columns
            .iter()
            .map(|(k, v)| (k.clone(), v[from * q..to * q].to_vec()))
            .collect();
        MarketPanel { start: self.day(from), n_days: to.saturating_sub(from), columns }
    }
}

/// Checks that `keys` cover a contiguous quarter-hourly grid exactly once and
/// returns `(first day, number of days)`.
pub fn check_grid(keys: &[DeliveryIndex]) -> Result<(NaiveDate, usize)> {
    let first = keys.iter().map(|k| k.day()).min().ok_or_else(|| {
        Error::Integrity("no rows".into())
    })?;
    let last = keys.iter().map(|k| k.day()).max().expect("non-empty");
    let n_days = days_between(first, last) as usize + 1;
    let q = QH_PER_DAY as usize;
    let mut seen = vec![false; n_days * q];
    for k in keys {
        let row = days_between(first, k.day()) as usize * q + k.qh() as usize - 1;
        if seen[row] {
            return Err(Error::Integrity(format!("duplicated delivery {k}")));
        }
        seen[row] = true;
    }
    if let Some(row) = seen.iter().position(|s| !s) {
        let day = add_days(first, (row / q) as i64);
        return Err(Error::Integrity(format!("grid gap at {day} qh{}", row % q + 1)));
    }
    Ok((first, n_days))
}

/// An intraday continuous product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Product {
    /// Hourly product for hour 1..=24.
    Hourly(u8),
    /// Quarter-hourly product for quarter-hour 1..=96.
    QuarterHourly(u8),
}

impl Product {
    pub fn delivery_start(&self, day: NaiveDate) -> Timestamp {
        let minutes = match *self {
            Product::Hourly(h) => 60 * (h as i64 - 1),
            Product::QuarterHourly(q) => 15 * (q as i64 - 1),
        };
        Timestamp::day_start(day).plus_minutes(minutes)
    }

    pub fn type_code(&self) -> &'static str {
        match self {
            Product::Hourly(_) => "H",
            Product::QuarterHourly(_) => "QH",
        }
    }

    pub fn id(&self) -> u8 {
        match *self {
            Product::Hourly(h) | Product::QuarterHourly(h) => h,
        }
    }

    pub fn parse(type_code: &str, id: u8) -> Result<Self> {
        match (type_code, id) {
            ("H", 1..=24) => Ok(Product::Hourly(id)),
            ("QH", 1..=96) => Ok(Product::QuarterHourly(id)),
            _ => Err(Error::Input(format!("invalid product {type_code}/{id}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub product: Product,
    pub delivery_day: NaiveDate,
    pub exec_time: Timestamp,
    /// EUR/MWh.
    pub price: f64,
    /// MWh, strictly positive.
    pub volume: f64,
}

impl Transaction {
    pub fn delivery_start(&self) -> Timestamp {
        self.product.delivery_start(self.delivery_day)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.volume > 0.0) || !self.volume.is_finite() {
            return Err(Error::Input(format!("transaction volume {} not positive", self.volume)));
        }
        if !self.price.is_finite() {
            return Err(Error::Input("transaction price not finite".into()));
        }
        if self.exec_time >= self.delivery_start() {
            return Err(Error::Input(format!(
                "transaction at {} not before delivery start {}",
                self.exec_time,
                self.delivery_start()
            )));
        }
        Ok(())
    }
}
