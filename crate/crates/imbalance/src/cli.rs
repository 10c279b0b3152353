//! Subcommands of the `imbalance` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use imbalance_core::backtest::{prepare, Dataset, ForecastStore, RollingConfig, TunedParams};
use imbalance_core::clean::{clean_panel, FilledCell};
use imbalance_core::dists::Family;
use imbalance_core::eval::{align_losses, daily_losses, dm_test, panel_truth};
use imbalance_core::features::TradeBook;
use imbalance_core::models::{ModelId, COMBINATION_ID};
use imbalance_core::synth::generate_synthetic;
use imbalance_core::{MarketPanel, Transaction};

use crate::config::{parse_models, parse_qh, Overrides, RunConfig};
use crate::csvio::{self, ColumnSchema, LoadReport};
use crate::error::{AppError, AppResult};
use crate::exec::{self, TuningLine};
use crate::report::{self, fmt_sig};
use crate::{fsio, store_io};

#[derive(Debug, Parser)]
#[command(name = "imbalance", version, about = "Probabilistic forecasting of quarter-hourly imbalance prices")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Comma-separated model ids, e.g. `naive,gamlss.t`.
    #[arg(long, global = true)]
    pub models: Option<String>,
    /// Comma-separated quarter-hours.
    #[arg(long, global = true)]
    pub qh: Option<String>,
    /// Also write JSON versions of every CSV output.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel and its intraday transactions.
    Synth {
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        transactions: Option<PathBuf>,
    },
    /// Clean the panel and export the feature matrix.
    Features {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random-search hyperparameters on the initial in-sample window.
    Tune,
    /// Rolling-window backtest into the forecast store.
    Backtest {
        /// Keep existing records and add the missing ones.
        #[arg(long)]
        append: bool,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Score the store and write the report files.
    Evaluate {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-sided DM test between two models of the store.
    DmTest {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Write the report files without printing the score table.
    Report {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn resolve_config(g: &GlobalArgs) -> AppResult<RunConfig> {
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    let qh = g.qh.as_deref().map(parse_qh).transpose()?;
    cfg.apply(&Overrides { seed: g.seed, jobs: g.jobs, models: g.models.as_deref().map(parse_models), qh });
    Ok(cfg)
}

/// Raw and cleaned market data.
#[derive(Debug)]
pub struct Market {
    pub raw: MarketPanel,
    pub clean: MarketPanel,
    pub transactions: Vec<Transaction>,
    pub load_report: LoadReport,
    pub filled: Vec<FilledCell>,
}

pub fn load_market(cfg: &RunConfig) -> AppResult<Market> {
    let (raw, load_report) = csvio::load_panel(&cfg.paths.panel, &ColumnSchema::default())?;
    let transactions = csvio::load_transactions(&cfg.paths.transactions)?;
    let (clean, filled) = clean_panel(&raw, &cfg.clean)?;
    Ok(Market { raw, clean, transactions, load_report, filled })
}

pub fn dataset(m: &Market, qh: &[u8]) -> AppResult<Dataset> {
    Ok(prepare(&m.clean, &TradeBook::new(&m.transactions), qh)?)
}

pub fn load_tuned(cfg: &RollingConfig, path: &Path) -> AppResult<TunedParams> {
    let needed: Vec<String> = cfg.models.iter().filter(|m| m.is_parametric()).map(|m| m.to_string()).collect();
    if needed.is_empty() {
        return Ok(TunedParams::default());
    }
    if !path.exists() {
        return Err(AppError::Runtime(format!(
            "tuned hyperparameters {} not found (needed by {}). Run `imbalance tune` first or restrict to `--models naive,lasso`",
            path.display(),
            needed.join(", ")
        )));
    }
    fsio::read_json(path)
}

pub fn run_backtest(cfg: &RunConfig, data: &Dataset) -> AppResult<(RollingConfig, ForecastStore)> {
    let rc = cfg.rolling()?;
    let tuned = load_tuned(&rc, &cfg.paths.tuned)?;
    let pool = exec::pool(cfg.jobs()?)?;
    let store = exec::parallel_backtest(data, &rc, &tuned, &pool)?;
    Ok((rc, store))
}

pub fn run_tuning(cfg: &RunConfig, data: &Dataset) -> AppResult<exec::TuningOutcome> {
    let rc = cfg.rolling()?;
    let previous: Vec<TuningLine> =
        if cfg.paths.trials.exists() { fsio::read_json_lines(&cfg.paths.trials)? } else { Vec::new() };
    let pool = exec::pool(cfg.jobs()?)?;
    let out = exec::tune_all(data, &rc, &cfg.tuning, &previous, &pool)?;
    let mut lines = out.lines.clone();
    for p in previous {
        if !lines.iter().any(|l| l.model == p.model && l.qh == p.qh && l.record.trial_id == p.record.trial_id) {
            lines.push(p);
        }
    }
    fsio::write_json_lines(&cfg.paths.trials, &lines)?;
    fsio::write_json(&cfg.paths.tuned, &out.tuned)?;
    Ok(out)
}

fn note_load(r: &LoadReport) {
    if r.total_missing() > 0 {
        let parts: Vec<String> = r.missing.iter().map(|(c, n)| format!("{c}: {n}")).collect();
        eprintln!("loaded {} rows; missing cells {}", r.rows, parts.join(", "));
    }
    if !r.unparseable.is_empty() {
        eprintln!("{} unparseable cells treated as missing", r.unparseable.len());
    }
    if !r.ignored_columns.is_empty() {
        eprintln!("ignored columns: {}", r.ignored_columns.join(", "));
    }
}

fn load_eval_inputs(cfg: &RunConfig, store: Option<&PathBuf>) -> AppResult<(ForecastStore, MarketPanel)> {
    let path = store.cloned().unwrap_or_else(|| cfg.paths.store.clone());
    let (store, _) = store_io::load_store(&path)?;
    let (panel, r) = csvio::load_panel(&cfg.paths.panel, &ColumnSchema::default())?;
    note_load(&r);
    Ok((store, panel))
}

pub fn execute(cli: &Cli) -> AppResult<()> {
    let mut cfg = resolve_config(&cli.global)?;
    cfg.jobs()?;
    match &cli.command {
        Command::Synth { days, panel, transactions } => {
            if let Some(d) = days {
                cfg.synth.n_days = *d;
            }
            let sc = cfg.synth()?;
            let m = generate_synthetic(&sc)?;
            let pp = panel.clone().unwrap_or_else(|| cfg.paths.panel.clone());
            let tp = transactions.clone().unwrap_or_else(|| cfg.paths.transactions.clone());
            csvio::save_panel(&pp, &m.panel)?;
            csvio::save_transactions(&tp, &m.transactions)?;
            println!(
                "wrote {} panel rows to {} and {} transactions to {}",
                m.panel.n_rows(),
                pp.display(),
                m.transactions.len(),
                tp.display()
            );
        }
        Command::Features { out } => {
            let m = load_market(&cfg)?;
            note_load(&m.load_report);
            csvio::save_cleaning_report(&cfg.paths.cleaning_report, &m.filled)?;
            let path = out.clone().unwrap_or_else(|| cfg.paths.features.clone());
            let mut buf = Vec::new();
            csvio::write_features(&m.clean, &TradeBook::new(&m.transactions), &cfg.rolling.qh, &mut buf)?;
            fsio::atomic_write(&path, &buf)?;
            println!(
                "wrote features for {} quarter-hours to {}; {} cells filled (see {})",
                cfg.rolling.qh.len(),
                path.display(),
                m.filled.len(),
                cfg.paths.cleaning_report.display()
            );
        }
        Command::Tune => {
            let rc = cfg.rolling()?;
            if !rc.models.iter().any(|m| m.is_parametric()) {
                return Err(AppError::Config("no tunable model selected (gamlss or probNN)".into()));
            }
            let m = load_market(&cfg)?;
            note_load(&m.load_report);
            let data = dataset(&m, &rc.qh)?;
            let out = run_tuning(&cfg, &data)?;
            println!("ran {} trials ({} recorded)", out.ran, out.lines.len());
            for e in &out.tuned.entries {
                let loss = out
                    .lines
                    .iter()
                    .filter(|l| l.model == e.model && l.qh == e.qh && l.record.params == e.params)
                    .find_map(|l| l.record.val_loss);
                println!("{} qh {}: best validation NLL {}", e.model, e.qh, loss.map_or("-".into(), fmt_sig));
            }
            println!("tuned parameters written to {}", cfg.paths.tuned.display());
        }
        Command::Backtest { append, store } => {
            let rc = cfg.rolling()?;
            load_tuned(&rc, &cfg.paths.tuned)?;
            let m = load_market(&cfg)?;
            note_load(&m.load_report);
            let data = dataset(&m, &rc.qh)?;
            let (rc, fresh) = run_backtest(&cfg, &data)?;
            let path = store.clone().unwrap_or_else(|| cfg.paths.store.clone());
            let (saved, added) = if *append && path.exists() {
                store_io::append_store(&path, &fresh, &rc)?
            } else {
                store_io::save_store(&path, &fresh, &rc)?;
                let n = fresh.len();
                (fresh, n)
            };
            println!("{} forecasts written to {} ({} new)", saved.len(), path.display(), added);
            if !saved.failures.is_empty() {
                eprintln!("{} forecasts failed:", saved.failures.len());
                for f in saved.failures.iter().take(10) {
                    eprintln!("  {} {}: {}", f.model_id, f.delivery, f.message);
                }
            }
            if saved.is_empty() {
                return Err(AppError::Runtime("every forecast failed".into()));
            }
        }
        Command::Evaluate { store, out } | Command::Report { store, out } => {
            let (store, panel) = load_eval_inputs(&cfg, store.as_ref())?;
            let ev = report::evaluate(&store, &panel)?;
            let dir = out.clone().unwrap_or_else(|| cfg.paths.reports.clone());
            let written = report::emit_report(&ev, &dir, cli.global.json)?;
            for w in &ev.warnings {
                eprintln!("warning: {w}");
            }
            if matches!(cli.command, Command::Evaluate { .. }) {
                print!("{}", report::scores_table(&ev.scores).to_csv());
            }
            println!("wrote {} files to {}", written.len(), dir.display());
        }
        Command::DmTest { a, b, store } => {
            let (mut store, panel) = load_eval_inputs(&cfg, store.as_ref())?;
            if a == COMBINATION_ID || b == COMBINATION_ID {
                let naive = ModelId::Naive.to_string();
                let gt = ModelId::Gamlss(Family::StudentT).to_string();
                for r in imbalance_core::backtest::combination_records(&store, &naive, &gt, COMBINATION_ID) {
                    store.insert(r)?;
                }
            }
            for m in [a, b] {
                if store.records_for(m).next().is_none() {
                    return Err(AppError::Config(format!("model {m} not in the store")));
                }
            }
            let truth = panel_truth(&panel);
            let (la, lb) = align_losses(&daily_losses(&store, a, &truth)?, &daily_losses(&store, b, &truth)?);
            let r = dm_test(&la, &lb)?;
            if cli.global.json {
                println!("{}", serde_json::to_string_pretty(&r).map_err(|e| AppError::Runtime(e.to_string()))?);
            } else {
                println!("DM statistic {} over {} days", fmt_sig(r.statistic), r.n);
                println!("p-value ({a} more accurate than {b}): {}", fmt_sig(r.p_a_better));
                println!("p-value ({b} more accurate than {a}): {}", fmt_sig(r.p_b_better));
            }
            if r.small_sample {
                eprintln!("warning: fewer than {} days; p-values are unreliable", imbalance_core::eval::DM_MIN_DAYS);
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
