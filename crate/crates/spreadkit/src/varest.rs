//! Zero-mean empirical variances of price increments at lag `L`.
//!
//! Three increment layouts are supported, indexed from 0:
//! - overlapping: pairs `(i, i+L)` for `i < n-L`;
//! - non-overlapping: pairs `(iL, (i+1)L)` for `i < ⌊(n-1)/L⌋`;
//! - strictly disjoint: pairs `(i(L+1), i(L+1)+L)` for `i < ⌊n/(L+1)⌋`,
//!   leaving one skipped point between consecutive increments.

use serde::{Deserialize, Serialize};

use crate::series::LogPriceSeries;
use crate::{Error, Result};

/// Increment layout used by the empirical variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarianceScheme {
    Overlapping = 1,
    NonOverlapping = 2,
    StrictlyDisjoint = 3,
}

impl VarianceScheme {
    pub const ALL: [VarianceScheme; 3] = [
        VarianceScheme::Overlapping,
        VarianceScheme::NonOverlapping,
        VarianceScheme::StrictlyDisjoint,
    ];

    pub fn from_index(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Self::Overlapping),
            2 => Ok(Self::NonOverlapping),
            3 => Ok(Self::StrictlyDisjoint),
            _ => Err(Error::InvalidInput(format!("variance scheme must be 1, 2 or 3, got {v}"))),
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    /// Scale factor ζ_v(L) relating k_v to n asymptotically: (1, L, L+1).
    pub fn zeta(self, lag: usize) -> f64 {
        match self {
            Self::Overlapping => 1.0,
            Self::NonOverlapping => lag as f64,
            Self::StrictlyDisjoint => lag as f64 + 1.0,
        }
    }
}

/// An empirical variance together with its bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub lag: usize,
    pub scheme: VarianceScheme,
    pub count: usize,
}

/// Number of increments k_v(n, L).
pub fn increment_count(n: usize, lag: usize, v: VarianceScheme) -> Result<usize> {
    if lag == 0 {
        return Err(Error::InvalidInput("lag must be at least 1".into()));
    }
    let k = match v {
        VarianceScheme::Overlapping => n.saturating_sub(lag),
        VarianceScheme::NonOverlapping => n.saturating_sub(1) / lag,
        VarianceScheme::StrictlyDisjoint => n / (lag + 1),
    };
    if k < 1 {
        return Err(Error::TooShort { needed: lag + 1, got: n });
    }
    Ok(k)
}

/// Empirical variance of a raw slice of log prices.
pub fn variance_of(values: &[f64], lag: usize, v: VarianceScheme) -> Result<f64> {
    let k = increment_count(values.len(), lag, v)?;
    let (stride, width) = match v {
        VarianceScheme::Overlapping => (1, lag),
        VarianceScheme::NonOverlapping => (lag, lag),
        VarianceScheme::StrictlyDisjoint => (lag + 1, lag),
    };
    let mut sum = 0.0;
    for i in 0..k {
        let start = i * stride;
        let d = values[start + width] - values[start];
        sum += d * d;
    }
    Ok(sum / k as f64)
}

/// Empirical variance V̂_v(n, L) of a series.
pub fn empirical_variance(
    series: &LogPriceSeries,
    lag: usize,
    v: VarianceScheme,
) -> Result<VarianceEstimate> {
    let value = variance_of(series.values(), lag, v)?;
    Ok(VarianceEstimate {
        value,
        lag,
        scheme: v,
        count: increment_count(series.len(), lag, v)?,
    })
}

/// Empirical variances at lags `1..=max_lag`, indexed by `lag - 1`.
pub fn variance_curve(values: &[f64], max_lag: usize, v: VarianceScheme) -> Result<Vec<f64>> {
    (1..=max_lag).map(|l| variance_of(values, l, v)).collect()
}
