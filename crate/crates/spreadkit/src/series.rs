//! Price series, OHLC bars, CSV ingestion and aggregation to coarser bars.
//!
//! Prices are stored as natural logs. Ingestion converts raw prices once.

use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Seconds per year used to turn a step in seconds into a step in years:
/// 260 trading days of 510 minutes.
pub const DEFAULT_ANNUALIZATION: f64 = 260.0 * 510.0 * 60.0;

/// Evenly spaced log prices with time step `step_seconds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogPriceSeries {
    values: Vec<f64>,
    step_seconds: f64,
    annualization: f64,
}

impl LogPriceSeries {
    pub fn new(values: Vec<f64>, step_seconds: f64) -> Result<Self> {
        Self::with_annualization(values, step_seconds, DEFAULT_ANNUALIZATION)
    }

    pub fn with_annualization(
        values: Vec<f64>,
        step_seconds: f64,
        annualization: f64,
    ) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooShort { needed: 2, got: values.len() });
        }
        if !(step_seconds > 0.0 && step_seconds.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "step_seconds must be positive, got {step_seconds}"
            )));
        }
        if !(annualization > 0.0 && annualization.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "annualization must be positive, got {annualization}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite log price at index {i}")));
        }
        Ok(Self { values, step_seconds, annualization })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step_seconds(&self) -> f64 {
        self.step_seconds
    }

    pub fn annualization(&self) -> f64 {
        self.annualization
    }

    /// Time step τ in years.
    pub fn tau_years(&self) -> f64 {
        self.step_seconds / self.annualization
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// One interval of open/high/low/close log prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcBar {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl OhlcBar {
    pub fn new(open: f64, high: f64, low: f64, close: f64) -> Result<Self> {
        let bar = Self { open, high, low, close };
        bar.validate()?;
        Ok(bar)
    }

    fn validate(&self) -> Result<()> {
        if ![self.open, self.high, self.low, self.close].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite OHLC value".into()));
        }
        if self.low > self.open.min(self.close) || self.high < self.open.max(self.close) {
            return Err(Error::InvalidInput(format!(
                "inconsistent bar: o={} h={} l={} c={}",
                self.open, self.high, self.low, self.close
            )));
        }
        Ok(())
    }

    pub fn mid_range(&self) -> f64 {
        0.5 * (self.high + self.low)
    }
}

/// Contiguous OHLC bars of equal duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OhlcSeries {
    bars: Vec<OhlcBar>,
    step_seconds: f64,
    annualization: f64,
}

impl OhlcSeries {
    pub fn new(bars: Vec<OhlcBar>, step_seconds: f64) -> Result<Self> {
        Self::with_annualization(bars, step_seconds, DEFAULT_ANNUALIZATION)
    }

    pub fn with_annualization(
        bars: Vec<OhlcBar>,
        step_seconds: f64,
        annualization: f64,
    ) -> Result<Self> {
        if bars.is_empty() {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        if !(step_seconds > 0.0 && step_seconds.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "step_seconds must be positive, got {step_seconds}"
            )));
        }
        for (i, b) in bars.iter().enumerate() {
            b.validate().map_err(|e| Error::InvalidInput(format!("bar {i}: {e}")))?;
        }
        Ok(Self { bars, step_seconds, annualization })
    }

    pub fn bars(&self) -> &[OhlcBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn step_seconds(&self) -> f64 {
        self.step_seconds
    }

    pub fn annualization(&self) -> f64 {
        self.annualization
    }

    /// Close prices as a log price series at the bar step.
    pub fn closes(&self) -> Result<LogPriceSeries> {
        LogPriceSeries::with_annualization(
            self.bars.iter().map(|b| b.close).collect(),
            self.step_seconds,
            self.annualization,
        )
    }
}

/// Aggregate a fine series into bars of `factor` points each.
///
/// A trailing partial window is dropped.
pub fn aggregate_bars(fine: &LogPriceSeries, factor: usize) -> Result<OhlcSeries> {
    if factor < 1 {
        return Err(Error::InvalidInput("aggregation factor must be at least 1".into()));
    }
    if fine.len() < factor {
        return Err(Error::TooShort { needed: factor, got: fine.len() });
    }
    let bars = fine
        .values()
        .chunks_exact(factor)
        .map(|w| {
            let (mut high, mut low) = (w[0], w[0]);
            for &v in &w[1..] {
                high = high.max(v);
                low = low.min(v);
            }
            OhlcBar { open: w[0], high, low, close: w[factor - 1] }
        })
        .collect();
    Ok(OhlcSeries {
        bars,
        step_seconds: fine.step_seconds() * factor as f64,
        annualization: fine.annualization(),
    })
}

/// Whether CSV prices are raw levels or already natural logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriceScale {
    Raw,
    Log,
}

/// Column names to read from a CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub close: String,
    pub open: Option<String>,
    pub high: Option<String>,
    pub low: Option<String>,
}

impl CsvSchema {
    pub fn close_only() -> Self {
        Self {
            timestamp: "timestamp".into(),
            close: "close".into(),
            open: None,
            high: None,
            low: None,
        }
    }

    pub fn ohlc() -> Self {
        Self {
            open: Some("open".into()),
            high: Some("high".into()),
            low: Some("low".into()),
            ..Self::close_only()
        }
    }

    fn is_ohlc(&self) -> bool {
        self.open.is_some() && self.high.is_some() && self.low.is_some()
    }
}

/// Result of [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedSeries {
    Close(LogPriceSeries),
    Ohlc(OhlcSeries),
}

impl LoadedSeries {
    /// Close prices, whichever form was loaded.
    pub fn closes(&self) -> Result<LogPriceSeries> {
        match self {
            LoadedSeries::Close(s) => Ok(s.clone()),
            LoadedSeries::Ohlc(b) => b.closes(),
        }
    }

    pub fn bars(&self) -> Option<&OhlcSeries> {
        match self {
            LoadedSeries::Ohlc(b) => Some(b),
            LoadedSeries::Close(_) => None,
        }
    }
}

/// Parse a timestamp given as epoch seconds or ISO-8601.
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            let utc = dt.and_utc();
            return Some(utc.timestamp() as f64 + utc.timestamp_subsec_nanos() as f64 * 1e-9);
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp() as f64);
    }
    None
}

/// Detect whether a header row carries open/high/low columns.
pub fn detect_schema(path: &Path) -> Result<CsvSchema> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(0))?;
    let headers = rdr.headers().map_err(csv_err(1))?;
    let has = |name: &str| headers.iter().any(|h| h.trim() == name);
    if has("open") && has("high") && has("low") {
        Ok(CsvSchema::ohlc())
    } else {
        Ok(CsvSchema::close_only())
    }
}

fn csv_err(row: usize) -> impl Fn(csv::Error) -> Error {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Csv { row, msg: format!("{other:?}") },
    }
}

/// Load a price CSV.
///
/// Row numbers in errors are 1-based data rows (the header is row 0).
/// `step_seconds` overrides the step inferred from the timestamps.
pub fn load_csv(
    path: &Path,
    schema: &CsvSchema,
    price_scale: PriceScale,
    step_seconds: Option<f64>,
) -> Result<LoadedSeries> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(0))?;
    let headers = rdr.headers().map_err(csv_err(0))?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Csv { row: 0, msg: format!("missing column '{name}'") })
    };
    let ts_col = match col(&schema.timestamp) {
        Ok(c) => Some(c),
        Err(e) if step_seconds.is_none() => return Err(e),
        Err(_) => None,
    };
    let close_col = col(&schema.close)?;
    let ohlc_cols = if schema.is_ohlc() {
        Some((
            col(schema.open.as_deref().unwrap_or_default())?,
            col(schema.high.as_deref().unwrap_or_default())?,
            col(schema.low.as_deref().unwrap_or_default())?,
        ))
    } else {
        None
    };

    let convert = |raw: &str, row: usize| -> Result<f64> {
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::Csv { row, msg: format!("cannot parse price '{raw}'") })?;
        match price_scale {
            PriceScale::Raw if v <= 0.0 => {
                Err(Error::Csv { row, msg: format!("non-positive price at row {row}") })
            }
            PriceScale::Raw => Ok(v.ln()),
            PriceScale::Log if !v.is_finite() => {
                Err(Error::Csv { row, msg: "non-finite log price".into() })
            }
            PriceScale::Log => Ok(v),
        }
    };

    let mut times = Vec::new();
    let mut closes = Vec::new();
    let mut bars = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(csv_err(row))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        if let Some(c) = ts_col {
            let t = parse_timestamp(field(c)).ok_or_else(|| Error::Csv {
                row,
                msg: format!("cannot parse timestamp '{}'", field(c)),
            })?;
            if let Some(&prev) = times.last() {
                if t <= prev {
                    return Err(Error::Csv { row, msg: format!("non-monotone timestamp at row {row}") });
                }
            }
            times.push(t);
        }
        let close = convert(field(close_col), row)?;
        if let Some((o, h, l)) = ohlc_cols {
            let bar = OhlcBar {
                open: convert(field(o), row)?,
                high: convert(field(h), row)?,
                low: convert(field(l), row)?,
                close,
            };
            bar.validate().map_err(|e| Error::Csv { row, msg: e.to_string() })?;
            bars.push(bar);
        } else {
            closes.push(close);
        }
    }

    let step = match step_seconds {
        Some(s) => s,
        None => infer_step(&times)?,
    };
    if ohlc_cols.is_some() {
        Ok(LoadedSeries::Ohlc(OhlcSeries::new(bars, step)?))
    } else {
        Ok(LoadedSeries::Close(LogPriceSeries::new(closes, step)?))
    }
}

/// Median spacing of strictly increasing timestamps.
fn infer_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: times.len() });
    }
    let mut diffs: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    diffs.sort_by(f64::total_cmp);
    Ok(diffs[diffs.len() / 2])
}

/// Write a close series as `timestamp,close` with epoch-second timestamps
/// starting at `start_epoch`.
pub fn write_close_csv(
    path: &Path,
    series: &LogPriceSeries,
    price_scale: PriceScale,
    start_epoch: f64,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(0))?;
    w.write_record(["timestamp", "close"]).map_err(csv_err(0))?;
    for (i, &v) in series.values().iter().enumerate() {
        let t = start_epoch + i as f64 * series.step_seconds();
        w.write_record([t.to_string(), scale_out(v, price_scale).to_string()])
            .map_err(csv_err(i + 1))?;
    }
    w.flush()?;
    Ok(())
}

/// Write bars as `timestamp,open,high,low,close`.
pub fn write_ohlc_csv(
    path: &Path,
    bars: &OhlcSeries,
    price_scale: PriceScale,
    start_epoch: f64,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(0))?;
    w.write_record(["timestamp", "open", "high", "low", "close"]).map_err(csv_err(0))?;
    for (i, b) in bars.bars().iter().enumerate() {
        let t = start_epoch + i as f64 * bars.step_seconds();
        w.write_record([
            t.to_string(),
            scale_out(b.open, price_scale).to_string(),
            scale_out(b.high, price_scale).to_string(),
            scale_out(b.low, price_scale).to_string(),
            scale_out(b.close, price_scale).to_string(),
        ])
        .map_err(csv_err(i + 1))?;
    }
    w.flush()?;
    Ok(())
}

fn scale_out(v: f64, scale: PriceScale) -> f64 {
    match scale {
        PriceScale::Raw => v.exp(),
        PriceScale::Log => v,
    }
}
