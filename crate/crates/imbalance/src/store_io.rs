//! Forecast store files: a CSV of records plus a JSON sidecar holding the
//! run configuration and the fit failures.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use imbalance_core::backtest::{FitFailure, ForecastRecord, ForecastStore, RollingConfig};
use imbalance_core::models::GRID_SIZE;
use imbalance_core::{DeliveryIndex, Error, Result};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::fsio;

pub const STORE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub schema_version: u32,
    pub generator: String,
    pub config: RollingConfig,
    pub n_records: usize,
    pub failures: Vec<FitFailure>,
}

impl StoreMeta {
    pub fn new(config: &RollingConfig, store: &ForecastStore) -> Self {
        StoreMeta {
            schema_version: STORE_SCHEMA_VERSION,
            generator: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            config: config.clone(),
            n_records: store.len(),
            failures: store.failures.clone(),
        }
    }
}

/// `out/store.csv` -> `out/store.meta.json`.
pub fn sidecar_path(store: &Path) -> PathBuf {
    store.with_extension("meta.json")
}

pub fn store_header() -> Vec<String> {
    let mut h: Vec<String> = ["model_id", "date", "qh", "mu_hat"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=GRID_SIZE).map(|i| format!("q{i:02}")));
    h.push("window_id".into());
    h.push("fit_date".into());
    h
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(e.to_string())
}

pub fn write_store<W: Write>(store: &ForecastStore, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(store_header()).map_err(csv_err)?;
    for r in store.records() {
        let mut rec = vec![
            r.model_id.clone(),
            r.delivery.day().to_string(),
            r.delivery.qh().to_string(),
            r.mu_hat.to_string(),
        ];
        rec.extend(r.quantiles.iter().map(f64::to_string));
        rec.push(r.window_id.to_string());
        rec.push(r.fit_date.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))
}

pub fn read_store<R: Read>(reader: R) -> Result<Vec<ForecastRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != store_header() {
        return Err(Error::Schema("forecast store header does not match the expected columns".into()));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Input(format!("line {line}: bad {what}"));
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&store_header()[i]));
        let day: NaiveDate = rec[1].parse().map_err(|_| bad("date"))?;
        let qh: u8 = rec[2].parse().map_err(|_| bad("qh"))?;
        let quantiles = (4..4 + GRID_SIZE).map(num).collect::<Result<Vec<_>>>()?;
        out.push(ForecastRecord {
            model_id: rec[0].to_string(),
            delivery: DeliveryIndex::new(day, qh)?,
            mu_hat: num(3)?,
            quantiles,
            window_id: rec[4 + GRID_SIZE].parse().map_err(|_| bad("window_id"))?,
            fit_date: rec[5 + GRID_SIZE].parse().map_err(|_| bad("fit_date"))?,
        });
    }
    Ok(out)
}

pub fn save_store(path: &Path, store: &ForecastStore, config: &RollingConfig) -> AppResult<()> {
    let mut buf = Vec::new();
    write_store(store, &mut buf)?;
    fsio::atomic_write(path, &buf)?;
    fsio::write_json(&sidecar_path(path), &StoreMeta::new(config, store))
}

pub fn load_store(path: &Path) -> AppResult<(ForecastStore, Option<StoreMeta>)> {
    let f = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let records = read_store(std::io::BufReader::new(f)).map_err(|e| AppError::format(path, e))?;
    let side = sidecar_path(path);
    let meta: Option<StoreMeta> = if side.exists() { Some(fsio::read_json(&side)?) } else { None };
    if let Some(m) = &meta {
        if m.schema_version != STORE_SCHEMA_VERSION {
            return Err(AppError::format(
                &side,
                format!("store schema version {} is not supported (expected {STORE_SCHEMA_VERSION})", m.schema_version),
            ));
        }
    }
    let failures = meta.as_ref().map(|m| m.failures.clone()).unwrap_or_default();
    let store = ForecastStore::from_records(records, failures).map_err(|e| AppError::format(path, e))?;
    Ok((store, meta))
}

/// Adds the records of `fresh` that `path` lacks, keeping existing ones.
/// Returns the number of records added.
pub fn append_store(path: &Path, fresh: &ForecastStore, config: &RollingConfig) -> AppResult<(ForecastStore, usize)> {
    let (mut store, _) = load_store(path)?;
    let added = store.append_new(fresh);
    for f in &fresh.failures {
        if !store.failures.contains(f) {
            store.failures.push(f.clone());
        }
    }
    save_store(path, &store, config)?;
    Ok((store, added))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_shape() {
        let h = store_header();
        assert_eq!(h.len(), 4 + 99 + 2);
        assert_eq!(h[4], "q01");
        assert_eq!(h[102], "q99");
    }

    #[test]
    fn round_trip_is_exact() {
        let day = NaiveDate::from_ymd_opt(2022, 2, 3).unwrap();
        let rec = ForecastRecord {
            model_id: "lasso".into(),
            delivery: DeliveryIndex::new(day, 25).unwrap(),
            mu_hat: 0.1 + 0.2,
            quantiles: (0..99).map(|i| (i as f64).sqrt() * 1e-3 - 7.0 / 3.0).collect(),
            fit_date: day,
            window_id: 4,
        };
        let s = ForecastStore::from_records(vec![rec], vec![]).unwrap();
        let mut buf = Vec::new();
        write_store(&s, &mut buf).unwrap();
        let back = read_store(buf.as_slice()).unwrap();
        assert_eq!(back, s.records());
    }
}
