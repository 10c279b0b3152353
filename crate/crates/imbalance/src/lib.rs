//! File formats, parallel execution and the command line around
//! [`imbalance_core`].

pub mod cli;
pub mod config;
pub mod csvio;
pub mod error;
pub mod exec;
pub mod fsio;
pub mod report;
pub mod store_io;

pub use error::{AppError, AppResult};
