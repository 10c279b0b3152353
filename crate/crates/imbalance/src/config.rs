//! TOML run configuration.
//!
//! Every section is optional. Command-line flags override file values, and
//! the seed has to come from one or the other. Relative paths resolve
//! against the working directory.
//!
//! ```toml
//! seed = 1
//! models = ["naive", "gamlss.N", "gamlss.t"]
//!
//! [paths]
//! panel = "data/panel.csv"
//! store = "out/store.csv"
//!
//! [rolling]
//! in_sample_days = 90
//! out_of_sample_days = 10
//! train_days = 70
//! val_days = 20
//! qh = [1, 25, 49, 73]
//!
//! [synth]
//! n_days = 120
//! tail_df = 4.0
//!
//! [tuning]
//! gamlss_trials = 50
//! probnn_trials = 100
//! ```

use std::path::{Path, PathBuf};

use imbalance_core::backtest::RollingConfig;
use imbalance_core::clean::CleanPolicy;
use imbalance_core::models::{LassoOptions, ModelId};
use imbalance_core::panel::col;
use imbalance_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub panel: PathBuf,
    pub transactions: PathBuf,
    pub store: PathBuf,
    pub reports: PathBuf,
    pub trials: PathBuf,
    pub tuned: PathBuf,
    pub features: PathBuf,
    pub cleaning_report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            panel: "data/panel.csv".into(),
            transactions: "data/transactions.csv".into(),
            store: "out/store.csv".into(),
            reports: "out/reports".into(),
            trials: "out/trials.jsonl".into(),
            tuned: "out/tuned.json".into(),
            features: "out/features.csv".into(),
            cleaning_report: "out/cleaning.json".into(),
        }
    }
}

/// Rolling-window settings without the seed and model list, which live at
/// the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RollingSection {
    pub in_sample_days: usize,
    pub out_of_sample_days: usize,
    pub train_days: usize,
    pub val_days: usize,
    pub qh: Vec<u8>,
    pub bootstrap_draws: usize,
    pub refit_every: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lasso: LassoOptions,
}

impl Default for RollingSection {
    fn default() -> Self {
        RollingSection {
            in_sample_days: 90,
            out_of_sample_days: 10,
            train_days: 70,
            val_days: 20,
            qh: vec![1, 25, 49, 73],
            bootstrap_draws: 1000,
            refit_every: 1,
            max_epochs: 1500,
            patience: 50,
            lasso: LassoOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningBudgets {
    pub gamlss_trials: usize,
    pub probnn_trials: usize,
}

impl Default for TuningBudgets {
    fn default() -> Self {
        TuningBudgets { gamlss_trials: 50, probnn_trials: 100 }
    }
}

impl TuningBudgets {
    pub fn trials_for(&self, model: ModelId) -> usize {
        match model {
            ModelId::ProbNN(_) => self.probnn_trials,
            _ => self.gamlss_trials,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub models: Vec<String>,
    pub jobs: Option<usize>,
    pub paths: Paths,
    pub rolling: RollingSection,
    pub synth: SynthConfig,
    pub tuning: TuningBudgets,
    pub clean: CleanPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            models: ModelId::ALL.iter().map(|m| m.to_string()).collect(),
            jobs: None,
            paths: Paths::default(),
            rolling: RollingSection::default(),
            synth: SynthConfig::default(),
            tuning: TuningBudgets::default(),
            clean: CleanPolicy { max_gap: 4, skip_columns: vec![col::IP.to_string()] },
        }
    }
}

/// Values given on the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub models: Option<Vec<String>>,
    pub qh: Option<Vec<u8>>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> AppResult<Self> {
        toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> AppResult<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| AppError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| AppError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.jobs.is_some() {
            self.jobs = o.jobs;
        }
        if let Some(m) = &o.models {
            self.models = m.clone();
        }
        if let Some(q) = &o.qh {
            self.rolling.qh = q.clone();
        }
    }

    pub fn seed(&self) -> AppResult<u64> {
        self.seed.ok_or_else(|| AppError::Config("a seed is required (`--seed` or `seed = ...`)".into()))
    }

    pub fn jobs(&self) -> AppResult<usize> {
        match self.jobs {
            Some(0) => Err(AppError::Config("--jobs must be at least 1".into())),
            Some(j) => Ok(j),
            None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }

    pub fn model_ids(&self) -> AppResult<Vec<ModelId>> {
        let mut out: Vec<ModelId> = Vec::new();
        for m in &self.models {
            let id: ModelId = m.trim().parse()?;
            if out.contains(&id) {
                return Err(AppError::Config(format!("model {id} listed twice")));
            }
            out.push(id);
        }
        if out.is_empty() {
            return Err(AppError::Config("no models selected".into()));
        }
        Ok(out)
    }

    pub fn rolling(&self) -> AppResult<RollingConfig> {
        let r = &self.rolling;
        let cfg = RollingConfig {
            in_sample_days: r.in_sample_days,
            out_of_sample_days: r.out_of_sample_days,
            train_days: r.train_days,
            val_days: r.val_days,
            qh: r.qh.clone(),
            bootstrap_draws: r.bootstrap_draws,
            refit_every: r.refit_every,
            models: self.model_ids()?,
            seed: self.seed()?,
            max_epochs: r.max_epochs,
            patience: r.patience,
            lasso: r.lasso,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth(&self) -> AppResult<SynthConfig> {
        let mut s = self.synth.clone();
        s.seed = self.seed()?;
        s.validate()?;
        Ok(s)
    }
}

pub fn parse_models(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|m| !m.is_empty()).map(str::to_string).collect()
}

pub fn parse_qh(s: &str) -> AppResult<Vec<u8>> {
    s.split(',')
        .map(str::trim)
        .filter(|q| !q.is_empty())
        .map(|q| q.parse::<u8>().map_err(|_| AppError::Config(format!("bad quarter-hour `{q}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml("seed = 3\n[rolling]\nin_sample_days = 40\ntrain_days = 30\nval_days = 10\n").unwrap();
        let r = c.rolling().unwrap();
        assert_eq!(r.seed, 3);
        assert_eq!(r.in_sample_days, 40);
        assert_eq!(r.out_of_sample_days, 10);
        assert_eq!(r.models.len(), 6);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let e = RunConfig::from_toml("sed = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn seed_is_mandatory() {
        assert_eq!(RunConfig::default().rolling().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn flags_override_file() {
        let mut c = RunConfig::from_toml("seed = 3\nmodels = [\"lasso\"]\n").unwrap();
        c.apply(&Overrides { seed: Some(9), models: Some(parse_models("naive, gamlss.t")), qh: Some(vec![5]), jobs: None });
        let r = c.rolling().unwrap();
        assert_eq!(r.seed, 9);
        assert_eq!(r.models.len(), 2);
        assert_eq!(r.qh, vec![5]);
        assert!(parse_qh("1,x").is_err());
    }
}
