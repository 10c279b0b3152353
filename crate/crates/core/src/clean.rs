//! Missing-value cleaning for market panels.
//!
//! Per-day columns are forward-filled first. Remaining gaps of at most
//! `max_gap` rows with observed neighbours are linearly interpolated; every
//! other gap takes the median of the same quarter-hour on the same weekday in
//! the other weeks of the panel (falling back to the same quarter-hour on any
//! day, then to the column median).

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::QH_PER_DAY;
use crate::math::median;
use crate::panel::{is_daily_column, MarketPanel};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanPolicy {
    pub max_gap: usize,
    /// Columns left untouched (typically the forecast target).
    #[serde(default)]
    pub skip_columns: Vec<String>,
}

impl Default for CleanPolicy {
    fn default() -> Self {
        CleanPolicy { max_gap: 4, skip_columns: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMethod {
    ForwardFill,
    Interpolate,
    WeeklyMedian,
    QhMedian,
    ColumnMedian,
}

/// One filled cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilledCell {
    pub date: NaiveDate,
    pub qh: u8,
    pub column: String,
    pub method: FillMethod,
    pub value: f64,
}

pub fn clean_panel(panel: &MarketPanel, policy: &CleanPolicy) -> Result<(MarketPanel, Vec<FilledCell>)> {
    let mut out = panel.clone();
    let mut report = Vec::new();
    let names: Vec<String> = panel.column_names().map(|s| s.to_string()).collect();
    for name in names {
        if policy.skip_columns.iter().any(|s| *s == name) {
            continue;
        }
        let values = out.column_mut(&name).expect("column listed");
        if values.iter().all(|v| v.is_nan()) {
            return Err(Error::Unfillable(name));
        }
        let mut fills = Vec::new();
        if is_daily_column(&name) {
            forward_fill(values, &mut fills);
        }
        fill_column(values, policy.max_gap, &mut fills);
        for (row, method, value) in fills {
            let idx = panel.index_of(row);
            report.push(FilledCell { date: idx.day(), qh: idx.qh(), column: name.clone(), method, value });
        }
    }
    report.sort_by(|a, b| (a.date, a.qh, &a.column).cmp(&(b.date, b.qh, &b.column)));
    Ok((out, report))
}

fn forward_fill(values: &mut [f64], fills: &mut Vec<(usize, FillMethod, f64)>) {
    let mut last = f64::NAN;
    for (row, v) in values.iter_mut().enumerate() {
        if v.is_nan() {
            if !last.is_nan() {
                *v = last;
                fills.push((row, FillMethod::ForwardFill, last));
            }
        } else {
            last = *v;
        }
    }
}

fn fill_column(values: &mut [f64], max_gap: usize, fills: &mut Vec<(usize, FillMethod, f64)>) {
    let n = values.len();
    let q = QH_PER_DAY as usize;
    let week = 7 * q;
    let snapshot = values.to_vec();
    let mut row = 0;
    while row < n {
        if !snapshot[row].is_nan() {
            row += 1;
            continue;
        }
        let start = row;
        while row < n && snapshot[row].is_nan() {
            row += 1;
        }
        let end = row;
        let len = end - start;
        if len <= max_gap && start > 0 && end < n {
            let (a, b) = (snapshot[start - 1], snapshot[end]);
            for r in start..end {
                let w = (r - start + 1) as f64 / (len + 1) as f64;
                let v = a + w * (b - a);
                values[r] = v;
                fills.push((r, FillMethod::Interpolate, v));
            }
            continue;
        }
        for r in start..end {
            let weekly: Vec<f64> = same_phase(&snapshot, r, week);
            let (method, v) = if !weekly.is_empty() {
                (FillMethod::WeeklyMedian, median(&weekly))
            } else {
                let daily = same_phase(&snapshot, r, q);
                if !daily.is_empty() {
                    (FillMethod::QhMedian, median(&daily))
                } else {
                    let all: Vec<f64> = snapshot.iter().copied().filter(|v| !v.is_nan()).collect();
                    (FillMethod::ColumnMedian, median(&all))
                }
            };
            values[r] = v;
            fills.push((r, method, v));
        }
    }
}

/// Observed values at rows `r ± k * period`.
fn same_phase(values: &[f64], r: usize, period: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut i = r % period;
    while i < values.len() {
        if i != r && !values[i].is_nan() {
            out.push(values[i]);
        }
        i += period;
    }
    out
}
