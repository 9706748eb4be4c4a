//! Core numerics for deep-learning equal-weight subset portfolios (DEWSP).
//!
//! The pipeline this crate implements runs on monthly OHLCV data:
//!
//! 1. [`market_data`] validates, resamples and splits asset series into
//!    train / validation / test windows.
//! 2. [`indicators`] turns prices and volumes into binary momentum, moving
//!    average and on-balance-volume signals with a 1-month-ahead target.
//! 3. [`neural`] trains a small feed-forward regressor on those features and
//!    [`hpo`] searches its hyperparameters with a categorical TPE.
//! 4. [`portfolio`] ranks assets by forecast and builds equal-weight top-N
//!    subsets, alongside max-Sharpe and minimum-variance benchmarks.
//! 5. [`backtest`] rebalances monthly without friction and [`metrics`]
//!    summarises the curves by Sharpe ratio, APC and ASRIR.
//! 6. [`experiment`] wires the steps together for one universe and audits
//!    formation-month weights against truncated data.
//!
//! [`synth`] generates markets with planted predictability for testing.
//! Everything here is `no_std` + `alloc`. File formats, the CLI, threading
//! and reports live in the `dewsp` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod backtest;
pub mod experiment;
pub mod hpo;
pub mod indicators;
pub mod linalg;
pub mod market_data;
pub mod metrics;
pub mod neural;
pub mod portfolio;
pub mod rng;
pub mod synth;

mod error;

pub use error::{Error, Result};
