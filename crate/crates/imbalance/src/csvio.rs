//! CSV formats for panels, transactions and feature matrices.
//!
//! Panel files carry `date,qh` followed by value columns, one row per
//! quarter-hour; an empty cell is a missing value. Floats are written in
//! their shortest round-trip form, so load, save and load again reproduces a
//! panel bit for bit.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use imbalance_core::calendar::QH_PER_DAY;
use imbalance_core::clean::FilledCell;
use imbalance_core::features::{FeatureAssembler, TradeBook};
use imbalance_core::panel::{canonical_columns, check_grid, MANDATORY_COLUMNS};
use imbalance_core::{DeliveryIndex, Error, MarketPanel, Product, Result, Timestamp, Transaction};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::fsio;

const DATE_FMT: &str = "%Y-%m-%d";
const TIME_FMT: &str = "%Y-%m-%dT%H:%M:%S";

/// Maps file headers onto canonical column names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub aliases: BTreeMap<String, String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        let mut aliases: BTreeMap<String, String> =
            canonical_columns().into_iter().map(|c| (c.clone(), c)).collect();
        for (from, to) in [("IDIndex_h", "IDX_h"), ("IDIndex_qh", "IDX_qh")] {
            aliases.insert(from.into(), to.into());
        }
        ColumnSchema { aliases }
    }
}

impl ColumnSchema {
    pub fn with_alias(mut self, header: &str, column: &str) -> Self {
        self.aliases.insert(header.into(), column.into());
        self
    }

    pub fn resolve(&self, header: &str) -> Option<&str> {
        self.aliases.get(header.trim()).map(String::as_str)
    }
}

/// One cell that could not be read as a finite number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadCell {
    /// 1-based line in the file, header included.
    pub line: u64,
    pub column: String,
    pub raw: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows: usize,
    /// Missing cells per column, unparseable ones included.
    pub missing: BTreeMap<String, usize>,
    pub unparseable: Vec<BadCell>,
    pub ignored_columns: Vec<String>,
}

impl LoadReport {
    pub fn total_missing(&self) -> usize {
        self.missing.values().sum()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(e.to_string())
}

pub fn read_panel<R: Read>(reader: R, schema: &ColumnSchema) -> Result<(MarketPanel, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let date_col = find("date").ok_or_else(|| Error::Schema("no `date` column".into()))?;
    let qh_col = find("qh").ok_or_else(|| Error::Schema("no `qh` column".into()))?;

    let mut report = LoadReport::default();
    let mut value_cols: Vec<(usize, String)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i == date_col || i == qh_col {
            continue;
        }
        match schema.resolve(h) {
            Some(c) if value_cols.iter().any(|(_, v)| v == c) => {
                return Err(Error::Schema(format!("column {c} appears twice")));
            }
            Some(c) => value_cols.push((i, c.to_string())),
            None => report.ignored_columns.push(h.to_string()),
        }
    }
    for m in MANDATORY_COLUMNS {
        if !value_cols.iter().any(|(_, c)| c == m) {
            return Err(Error::Schema(format!("mandatory column {m} missing")));
        }
    }

    let mut keys = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); value_cols.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = NaiveDate::parse_from_str(rec.get(date_col).unwrap_or("").trim(), DATE_FMT)
            .map_err(|e| Error::Input(format!("line {line}: bad date: {e}")))?;
        let qh: u8 = rec
            .get(qh_col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| Error::Input(format!("line {line}: bad qh: {e}")))?;
        keys.push(DeliveryIndex::new(date, qh)?);
        for (slot, (i, name)) in values.iter_mut().zip(&value_cols) {
            let raw = rec.get(*i).unwrap_or("").trim();
            let v = if raw.is_empty() {
                f64::NAN
            } else {
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        report.unparseable.push(BadCell { line, column: name.clone(), raw: raw.to_string() });
                        f64::NAN
                    }
                }
            };
            if v.is_nan() {
                *report.missing.entry(name.clone()).or_default() += 1;
            }
            slot.push(v);
        }
    }
    let (start, n_days) = check_grid(&keys)?;
    let mut panel = MarketPanel::new(start, n_days);
    for ((_, name), col) in value_cols.iter().zip(values) {
        let mut grid = vec![f64::NAN; panel.n_rows()];
        for (k, v) in keys.iter().zip(col) {
            grid[panel.row_of(*k).expect("key on grid")] = v;
        }
        panel.set_column(name, grid)?;
    }
    panel.validate()?;
    report.rows = keys.len();
    Ok((panel, report))
}

/// Canonical columns first, then any others by name.
fn output_columns(panel: &MarketPanel) -> Vec<String> {
    let canon = canonical_columns();
    let mut out: Vec<String> = canon.iter().filter(|c| panel.has_column(c)).cloned().collect();
    out.extend(panel.column_names().filter(|c| !canon.iter().any(|k| k == c)).map(str::to_string));
    out
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub fn write_panel<W: Write>(panel: &MarketPanel, writer: W) -> Result<()> {
    let cols = output_columns(panel);
    let data: Vec<&[f64]> = cols.iter().map(|c| panel.column(c).expect("listed column")).collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string(), "qh".to_string()];
    header.extend(cols.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for row in 0..panel.n_rows() {
        let idx = panel.index_of(row);
        let mut rec = vec![idx.day().format(DATE_FMT).to_string(), idx.qh().to_string()];
        rec.extend(data.iter().map(|c| fmt_value(c[row])));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct TxnRow {
    product_type: String,
    product_id: u8,
    delivery_date: String,
    exec_time: String,
    price: f64,
    volume: f64,
}

pub fn read_transactions<R: Read>(reader: R) -> Result<Vec<Transaction>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<TxnRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Input(format!("line {line}: {e}")))?;
        let bad = |what: &str, e: chrono::ParseError| Error::Input(format!("line {line}: bad {what}: {e}"));
        let t = Transaction {
            product: Product::parse(&row.product_type, row.product_id)?,
            delivery_day: NaiveDate::parse_from_str(&row.delivery_date, DATE_FMT).map_err(|e| bad("delivery_date", e))?,
            exec_time: Timestamp::from_datetime(
                NaiveDateTime::parse_from_str(&row.exec_time, TIME_FMT).map_err(|e| bad("exec_time", e))?,
            ),
            price: row.price,
            volume: row.volume,
        };
        t.validate().map_err(|e| Error::Input(format!("line {line}: {e}")))?;
        out.push(t);
    }
    Ok(out)
}

pub fn write_transactions<W: Write>(txns: &[Transaction], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in txns {
        w.serialize(TxnRow {
            product_type: t.product.type_code().into(),
            product_id: t.product.id(),
            delivery_date: t.delivery_day.format(DATE_FMT).to_string(),
            exec_time: t.exec_time.to_string(),
            price: t.price,
            volume: t.volume,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))
}

/// Feature matrix with one row per (date, qh) for every day that has a
/// previous day in the panel.
pub fn write_features<W: Write>(panel: &MarketPanel, book: &TradeBook, qhs: &[u8], writer: W) -> Result<()> {
    let asm = FeatureAssembler::new(panel, book);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string(), "qh".to_string()];
    header.extend(asm.layout().names().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let mut qhs = qhs.to_vec();
    qhs.sort_unstable();
    for d in 1..panel.n_days() {
        for &q in &qhs {
            let idx = DeliveryIndex::new(panel.day(d), q)?;
            let fv = asm.assemble(idx)?;
            let mut rec = vec![idx.day().format(DATE_FMT).to_string(), q.to_string()];
            rec.extend(fv.values.iter().map(|v| fmt_value(*v)));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))
}

/// Every quarter-hour of the day.
pub fn all_qh() -> Vec<u8> {
    (1..=QH_PER_DAY).collect()
}

fn wrap<T>(path: &Path, r: Result<T>) -> AppResult<T> {
    r.map_err(|e| match e {
        Error::Input(m) => AppError::format(path, m),
        other => AppError::format(path, other),
    })
}

pub fn load_panel(path: &Path, schema: &ColumnSchema) -> AppResult<(MarketPanel, LoadReport)> {
    let f = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    wrap(path, read_panel(std::io::BufReader::new(f), schema))
}

pub fn save_panel(path: &Path, panel: &MarketPanel) -> AppResult<()> {
    let mut buf = Vec::new();
    write_panel(panel, &mut buf)?;
    fsio::atomic_write(path, &buf)
}

pub fn load_transactions(path: &Path) -> AppResult<Vec<Transaction>> {
    let f = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    wrap(path, read_transactions(std::io::BufReader::new(f)))
}

pub fn save_transactions(path: &Path, txns: &[Transaction]) -> AppResult<()> {
    let mut buf = Vec::new();
    write_transactions(txns, &mut buf)?;
    fsio::atomic_write(path, &buf)
}

pub fn save_cleaning_report(path: &Path, cells: &[FilledCell]) -> AppResult<()> {
    fsio::write_json(path, &cells)
}
