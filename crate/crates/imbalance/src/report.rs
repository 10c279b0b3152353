//! Evaluation reports: a markdown summary plus CSV tables, each optionally
//! mirrored as JSON. Floats are written with 6 significant digits.

use std::path::{Path, PathBuf};

use imbalance_core::backtest::{combination_records, ForecastStore};
use imbalance_core::eval::{dm_matrix, panel_truth, score_table, DmMatrix, ScoreTable};
use imbalance_core::models::{ModelId, COMBINATION_ID, GRID_SIZE};
use imbalance_core::MarketPanel;
use serde_json::{Map, Value};

use crate::error::{AppError, AppResult};
use crate::fsio;

/// Formats `v` with 6 significant digits, switching to scientific notation
/// outside `[1e-4, 1e6)`.
pub fn fmt_sig(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        return format!("{}e{exp}", trim_zeros(mant));
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    Num(f64),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Num(v) => fmt_sig(*v),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(i) => Value::from(*i),
            Cell::Num(v) => fmt_sig(*v)
                .parse::<f64>()
                .ok()
                .and_then(serde_json::Number::from_f64)
                .map_or(Value::Null, Value::Number),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    /// File stem, e.g. `scores` for `scores.csv`.
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &str, headers: &[&str]) -> Self {
        Table { name: name.into(), headers: headers.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::csv)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let obj: Map<String, Value> = self.headers.iter().cloned().zip(r.iter().map(Cell::json)).collect();
                Value::Object(obj)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&rows).expect("json values");
        s.push('\n');
        s
    }
}

/// Scores, pairwise tests and the notes attached to them.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub scores: ScoreTable,
    pub dm: Option<DmMatrix>,
    pub warnings: Vec<String>,
    pub n_failures: usize,
}

fn model_rank(id: &str) -> (usize, String) {
    let pos = ModelId::ALL.iter().position(|m| m.to_string() == id);
    match (pos, id == COMBINATION_ID) {
        (Some(p), _) => (p, String::new()),
        (None, true) => (ModelId::ALL.len() + 1, String::new()),
        (None, false) => (ModelId::ALL.len(), id.to_string()),
    }
}

/// Scores every model of `store` against the panel's imbalance prices, adds
/// the naive and gamlss.t combination when both are present, and runs the
/// pairwise DM tests.
pub fn evaluate(store: &ForecastStore, panel: &MarketPanel) -> AppResult<Evaluation> {
    let mut warnings = Vec::new();
    let mut store = store.clone();
    let naive = ModelId::Naive.to_string();
    let gt = ModelId::Gamlss(imbalance_core::dists::Family::StudentT).to_string();
    let ids = store.model_ids();
    if ids.is_empty() {
        return Err(AppError::Runtime("the forecast store holds no records".into()));
    }
    if ids.contains(&naive) && ids.contains(&gt) && !ids.iter().any(|m| m == COMBINATION_ID) {
        for r in combination_records(&store, &naive, &gt, COMBINATION_ID) {
            store.insert(r)?;
        }
    }
    let truth = panel_truth(panel);
    let mut scores = score_table(&store, &truth)?;
    scores.models.sort_by_key(|m| model_rank(&m.model_id));
    let models: Vec<String> = scores.models.iter().map(|m| m.model_id.clone()).collect();
    let dm = if models.len() < 2 {
        warnings.push(format!("only one model ({}) in the store; DM matrix omitted", models[0]));
        None
    } else {
        let m = dm_matrix(&store, &models, &truth)?;
        let small = m.results.iter().flatten().flatten().find(|r| r.small_sample);
        if let Some(r) = small {
            warnings.push(format!(
                "DM tests use {} days (fewer than {}); p-values are unreliable",
                r.n,
                imbalance_core::eval::DM_MIN_DAYS
            ));
        }
        Some(m)
    };
    Ok(Evaluation { scores, dm, warnings, n_failures: store.failures.len() })
}

pub fn scores_table(s: &ScoreTable) -> Table {
    let mut t = Table::new("scores", &["model", "n", "CRPS", "MAE", "RMSE", "cov50", "cov90", "cov98"]);
    for m in &s.models {
        t.rows.push(vec![
            Cell::Text(m.model_id.clone()),
            Cell::Int(m.n as i64),
            Cell::Num(m.crps),
            Cell::Num(m.mae),
            Cell::Num(m.rmse),
            Cell::Num(m.cov50),
            Cell::Num(m.cov90),
            Cell::Num(m.cov98),
        ]);
    }
    t
}

pub fn pinball_table(s: &ScoreTable) -> Table {
    let mut t = Table::new("pinball", &["model", "prob", "pinball"]);
    for m in &s.models {
        for (i, v) in m.pinball_curve.iter().enumerate() {
            let p = (i + 1) as f64 / (GRID_SIZE + 1) as f64;
            t.rows.push(vec![Cell::Text(m.model_id.clone()), Cell::Num(p), Cell::Num(*v)]);
        }
    }
    t
}

pub fn crps_qh_table(s: &ScoreTable) -> Table {
    let mut t = Table::new("crps_qh", &["model", "qh", "CRPS"]);
    for m in &s.models {
        for (q, v) in &m.crps_by_qh {
            t.rows.push(vec![Cell::Text(m.model_id.clone()), Cell::Int(*q as i64), Cell::Num(*v)]);
        }
    }
    t
}

/// Rows are the tested model, columns the alternative that is claimed to be
/// better.
pub fn dm_table(dm: &DmMatrix) -> Table {
    let mut headers = vec!["model"];
    headers.extend(dm.models.iter().map(String::as_str));
    let mut t = Table::new("dm", &headers);
    for (m, row) in dm.models.iter().zip(&dm.p_values) {
        let mut r = vec![Cell::Text(m.clone())];
        r.extend(row.iter().map(|p| Cell::Num(*p)));
        t.rows.push(r);
    }
    t
}

pub fn tables(ev: &Evaluation) -> Vec<Table> {
    let mut out = vec![scores_table(&ev.scores), pinball_table(&ev.scores), crps_qh_table(&ev.scores)];
    if let Some(dm) = &ev.dm {
        out.push(dm_table(dm));
    }
    out
}

pub fn markdown_summary(ev: &Evaluation) -> String {
    let mut s = String::from("# Forecast evaluation\n\n");
    let t = scores_table(&ev.scores);
    s.push_str(&format!("| {} |\n", t.headers.join(" | ")));
    s.push_str(&format!("|{}\n", "---|".repeat(t.headers.len())));
    for r in &t.rows {
        let cells: Vec<String> = r.iter().map(Cell::csv).collect();
        s.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    if let Some(best) = ev.scores.models.iter().min_by(|a, b| a.crps.total_cmp(&b.crps)) {
        s.push_str(&format!("\nLowest CRPS: {} ({}).\n", best.model_id, fmt_sig(best.crps)));
    }
    if let Some(dm) = &ev.dm {
        s.push_str("\n## Diebold-Mariano p-values\n\nEntry (row, column) tests whether the column model is more accurate than the row model.\n\n");
        let t = dm_table(dm);
        s.push_str(&format!("| {} |\n", t.headers.join(" | ")));
        s.push_str(&format!("|{}\n", "---|".repeat(t.headers.len())));
        for r in &t.rows {
            let cells: Vec<String> = r.iter().map(Cell::csv).collect();
            s.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
    }
    if ev.n_failures > 0 {
        s.push_str(&format!("\n{} forecasts failed and are missing from the scores.\n", ev.n_failures));
    }
    if !ev.warnings.is_empty() {
        s.push_str("\n## Warnings\n\n");
        for w in &ev.warnings {
            s.push_str(&format!("- {w}\n"));
        }
    }
    s
}

/// Writes `summary.md` and every table into `dir`; returns the written paths.
pub fn emit_report(ev: &Evaluation, dir: &Path, json: bool) -> AppResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    let md = dir.join("summary.md");
    fsio::atomic_write(&md, markdown_summary(ev).as_bytes())?;
    written.push(md);
    for t in tables(ev) {
        let p = dir.join(format!("{}.csv", t.name));
        fsio::atomic_write(&p, t.to_csv().as_bytes())?;
        written.push(p);
        if json {
            let p = dir.join(format!("{}.json", t.name));
            fsio::atomic_write(&p, t.to_json().as_bytes())?;
            written.push(p);
        }
    }
    if ev.dm.is_none() {
        for ext in ["csv", "json"] {
            let stale = dir.join(format!("dm.{ext}"));
            if stale.exists() {
                std::fs::remove_file(&stale).map_err(|e| AppError::io(&stale, e))?;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(23.04), "23.04");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_sig(123456.7), "123457");
        assert_eq!(fmt_sig(1234567.0), "1.23457e6");
        assert_eq!(fmt_sig(0.00001234567), "1.23457e-5");
        assert_eq!(fmt_sig(-0.5), "-0.5");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(0.0001), "0.0001");
        assert_eq!(fmt_sig(999999.7), "1e6");
    }

    #[test]
    fn json_mirrors_csv() {
        let mut t = Table::new("x", &["model", "v"]);
        t.rows.push(vec![Cell::Text("a".into()), Cell::Num(2.0 / 3.0)]);
        assert_eq!(t.to_csv(), "model,v\na,0.666667\n");
        let v: Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v[0]["v"].as_f64().unwrap(), 0.666667);
        assert_eq!(v[0]["model"], "a");
    }
}
