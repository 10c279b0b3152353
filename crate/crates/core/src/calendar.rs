//! Delivery keys and market time.
//!
//! Timestamps are seconds on the local market clock. Every delivery day has
//! exactly 96 quarter-hours; DST transition days are not represented.

use chrono::{Datelike, NaiveDate, NaiveDateTime, Weekday};
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const QH_PER_DAY: u8 = 96;
pub const SECONDS_PER_MINUTE: i64 = 60;
pub const SECONDS_PER_DAY: i64 = 86_400;

/// Minutes between the forecast cutoff and the delivery start.
pub const CUTOFF_MINUTES: i64 = 30;

/// Seconds since 1970-01-01T00:00 on the local market clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_datetime(dt: NaiveDateTime) -> Self {
        Timestamp(dt.and_utc().timestamp())
    }

    pub fn day_start(day: NaiveDate) -> Self {
        Self::from_datetime(day.and_hms_opt(0, 0, 0).expect("midnight is valid"))
    }

    pub fn to_datetime(self) -> NaiveDateTime {
        chrono::DateTime::from_timestamp(self.0, 0)
            .expect("timestamp within chrono range")
            .naive_utc()
    }

    pub fn plus_minutes(self, minutes: i64) -> Self {
        Timestamp(self.0 + minutes * SECONDS_PER_MINUTE)
    }

    pub fn minus_minutes(self, minutes: i64) -> Self {
        Timestamp(self.0 - minutes * SECONDS_PER_MINUTE)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_datetime().format("%Y-%m-%dT%H:%M:%S"))
    }
}

/// A (day, quarter-hour) delivery key; `qh = 1` is 00:00–00:15.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeliveryIndex {
    day: NaiveDate,
    qh: u8,
}

impl DeliveryIndex {
    pub fn new(day: NaiveDate, qh: u8) -> Result<Self> {
        if !(1..=QH_PER_DAY).contains(&qh) {
            return Err(Error::Domain(alloc::format!("quarter-hour {qh} outside 1..=96")));
        }
        Ok(DeliveryIndex { day, qh })
    }

    pub fn day(&self) -> NaiveDate {
        self.day
    }

    pub fn qh(&self) -> u8 {
        self.qh
    }

    /// Delivery hour in 1..=24.
    pub fn hour(&self) -> u8 {
        self.qh.div_ceil(4)
    }

    pub fn start(&self) -> Timestamp {
        Timestamp::day_start(self.day).plus_minutes(15 * (self.qh as i64 - 1))
    }

    /// Last instant of information usable for a forecast of this delivery.
    pub fn cutoff(&self) -> Timestamp {
        self.start().minus_minutes(CUTOFF_MINUTES)
    }

    /// The quarter-hour `lag` steps earlier, crossing midnight if needed.
    pub fn lagged(&self, lag: u32) -> DeliveryIndex {
        let mut day = self.day;
        let mut qh = self.qh as i64 - lag as i64;
        while qh < 1 {
            qh += QH_PER_DAY as i64;
            day = day.pred_opt().expect("date within range");
        }
        DeliveryIndex { day, qh: qh as u8 }
    }
}

impl fmt::Display for DeliveryIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} qh{}", self.day, self.qh)
    }
}

/// Index of the weekday with Monday = 0.
pub fn weekday_index(day: NaiveDate) -> usize {
    day.weekday().num_days_from_monday() as usize
}

pub fn is_weekend(day: NaiveDate) -> bool {
    matches!(day.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Day of year in [0, 365): the leap day 366 wraps to 0.
pub fn day_of_year(day: NaiveDate) -> f64 {
    (day.ordinal0() % 365) as f64
}

pub fn add_days(day: NaiveDate, n: i64) -> NaiveDate {
    day + chrono::Duration::days(n)
}

pub fn days_between(from: NaiveDate, to: NaiveDate) -> i64 {
    (to - from).num_days()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn hour_and_start() {
        let idx = DeliveryIndex::new(d(2020, 3, 2), 6).unwrap();
        assert_eq!(idx.hour(), 2);
        let start = idx.start().to_datetime();
        assert_eq!(start.format("%H:%M").to_string(), "01:15");
        assert_eq!(idx.cutoff().to_datetime().format("%H:%M").to_string(), "00:45");
        assert!(DeliveryIndex::new(d(2020, 3, 2), 0).is_err());
        assert!(DeliveryIndex::new(d(2020, 3, 2), 97).is_err());
        assert_eq!(DeliveryIndex::new(d(2020, 3, 2), 96).unwrap().hour(), 24);
    }

    #[test]
    fn lag_crosses_midnight() {
        let idx = DeliveryIndex::new(d(2020, 3, 2), 3).unwrap();
        let lag = idx.lagged(4);
        assert_eq!(lag.day(), d(2020, 3, 1));
        assert_eq!(lag.qh(), 95);
    }
}
