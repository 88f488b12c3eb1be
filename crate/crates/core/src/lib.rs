//! Multivariate pair trading of fiat currencies through a common crypto
//! asset: data alignment, pair screening, spread signals, mean-variance
//! allocation, backtesting and reporting.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod analytics;
pub mod backtest;
pub mod error;
pub mod ledger;
pub mod market_data;
pub mod output;
pub mod qp;
pub mod screening;
pub mod signal;
pub mod synthetic;

pub use error::{Error, Result};
pub use market_data::PriceMatrix;
