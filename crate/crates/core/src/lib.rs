//! Very short-term probabilistic forecasting of quarter-hourly electricity
//! imbalance prices.
//!
//! The crate is `no_std` (with `alloc`) and contains the whole numerical
//! pipeline: market data containers and cleaning, a synthetic market
//! generator, causal feature construction, the four forecasting model
//! families, hyperparameter search, rolling-window orchestration and the
//! scoring suite. File formats, parallel execution and the command line live
//! in the `imbalance` companion crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod math;

pub mod backtest;
pub mod calendar;
pub mod clean;
pub mod dists;
pub mod error;
pub mod eval;
pub mod features;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod panel;
pub mod rng;
pub mod synth;
pub mod transforms;
pub mod tuning;

pub use calendar::{DeliveryIndex, Timestamp};
pub use error::{Error, Result};
pub use panel::{MarketPanel, Product, Transaction};
