//! Bid-ask spread estimation from transaction prices under serial dependence.
//!
//! The observed log price is modelled as `p = p* + (S/2)·sign`, where `p*` is a
//! Brownian or fractional Brownian mid price and the trade signs are either
//! independent or exponentially autocorrelated. Spread estimators combine
//! empirical variances of price increments at several lags.
//!
//! Modules:
//! - [`series`]: price series, OHLC bars, CSV ingestion and bar aggregation.
//! - [`varest`]: empirical variances of increments at lag `L`.
//! - [`spreads`]: the moment-based spread estimators and the four-parameter fit.
//! - [`benchmarks`]: Roll, Corwin-Schultz, Abdi-Ranaldo and AGK₁.
//! - [`theory`]: closed-form moments, variance-of-variance and asymptotics.
//! - [`simkit`]: simulators for the generative market models.
//! - [`lab`]: Monte Carlo harness, relevance test and evaluation metrics.

pub mod benchmarks;
pub mod lab;
pub mod series;
pub mod simkit;
pub mod spreads;
pub mod theory;
pub mod varest;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("series too short: need {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("{0}")]
    Degenerate(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("unimplemented: {0}")]
    Unimplemented(String),
    #[error("row {row}: {msg}")]
    Csv { row: usize, msg: String },
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use series::{LogPriceSeries, OhlcBar, OhlcSeries};
pub use spreads::SpreadEstimate;
pub use theory::{ModelKind, ModelSpec};
pub use varest::VarianceScheme;
