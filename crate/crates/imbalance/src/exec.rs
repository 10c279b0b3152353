//! Parallel execution of backtest chains and tuning trials.
//!
//! Work items carry their own seed streams and results are collected in
//! plan order, so outputs do not depend on the number of workers.

use std::time::Instant;

use imbalance_core::backtest::{
    in_sample_objective, merge_chains, plan_chains, run_chain, Dataset, ForecastStore, RollingConfig, TunedParams,
};
use imbalance_core::models::ModelId;
use imbalance_core::tuning::{record_for, reuse_records, select_best, trial_plan, SearchSpace, TrialRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TuningBudgets;
use crate::error::{AppError, AppResult};

pub fn pool(jobs: usize) -> AppResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| AppError::Runtime(format!("cannot start worker pool: {e}")))
}

pub fn parallel_backtest(
    data: &Dataset,
    cfg: &RollingConfig,
    tuned: &TunedParams,
    pool: &rayon::ThreadPool,
) -> AppResult<ForecastStore> {
    let tasks = plan_chains(data.n_days, data.start, cfg, tuned)?;
    let outputs = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| run_chain(data, cfg, t.model, t.qh, t.hyper.as_ref()))
            .collect::<Vec<_>>()
    });
    Ok(merge_chains(outputs)?)
}

/// One line of the trials file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningLine {
    pub model: ModelId,
    pub qh: u8,
    #[serde(flatten)]
    pub record: TrialRecord,
}

pub fn search_space(model: ModelId) -> Option<SearchSpace> {
    match model {
        ModelId::Gamlss(f) => Some(SearchSpace::gamlss(f)),
        ModelId::ProbNN(_) => Some(SearchSpace::probnn()),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct TuningOutcome {
    /// All trial records, ordered by (model, qh, trial id).
    pub lines: Vec<TuningLine>,
    pub tuned: TunedParams,
    /// Trials actually run, i.e. not taken over from `previous`.
    pub ran: usize,
}

/// Tunes every parametric model of `cfg` at every quarter-hour on the initial
/// in-sample window. Trials already present in `previous` are reused.
pub fn tune_all(
    data: &Dataset,
    cfg: &RollingConfig,
    budgets: &TuningBudgets,
    previous: &[TuningLine],
    pool: &rayon::ThreadPool,
) -> AppResult<TuningOutcome> {
    struct Job<'a> {
        model: ModelId,
        qh: u8,
        trial: &'a imbalance_core::tuning::PlannedTrial,
    }
    let mut groups = Vec::new();
    for &model in &cfg.models {
        let Some(space) = search_space(model) else { continue };
        let n = budgets.trials_for(model);
        if n == 0 {
            return Err(AppError::Config(format!("trial budget for {model} must be positive")));
        }
        for &qh in &cfg.qh {
            let plan = trial_plan(&space, n, cfg.seed);
            let prev: Vec<TrialRecord> =
                previous.iter().filter(|l| l.model == model && l.qh == qh).map(|l| l.record.clone()).collect();
            let reused = reuse_records(&plan, &prev, cfg.seed)?;
            groups.push((model, qh, plan, reused));
        }
    }
    let jobs: Vec<Job> = groups
        .iter()
        .flat_map(|(model, qh, plan, reused)| {
            plan.iter().zip(reused).filter(|(_, r)| r.is_none()).map(|(t, _)| Job { model: *model, qh: *qh, trial: t })
        })
        .collect();
    let ran = jobs.len();
    let fresh: Vec<TrialRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|j| {
                let t0 = Instant::now();
                let loss = in_sample_objective(data, cfg, j.model, j.qh, &j.trial.params, j.trial.key);
                record_for(j.trial, loss, Some(t0.elapsed().as_millis() as u64))
            })
            .collect()
    });
    let mut fresh = fresh.into_iter();
    let mut lines = Vec::new();
    let mut tuned = TunedParams::default();
    for (model, qh, _, reused) in groups {
        let records: Vec<TrialRecord> =
            reused.into_iter().map(|r| r.unwrap_or_else(|| fresh.next().expect("one result per job"))).collect();
        let best = select_best(&records).map_err(|e| AppError::Runtime(format!("{model} qh {qh}: {e}")))?;
        tuned.insert(model, qh, records[best].params.clone());
        lines.extend(records.into_iter().map(|record| TuningLine { model, qh, record }));
    }
    Ok(TuningOutcome { lines, tuned, ran })
}
