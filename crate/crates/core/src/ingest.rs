//! Price loading, log-returns and the `|r| <= k sigma` domain restriction.

use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Default clipping multiplier applied to the return standard deviation.
pub const DEFAULT_CLIP_K: f64 = 1.5;

/// Dated, strictly positive price observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
    label: String,
}

impl PriceSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::Validation(format!(
                "{} dates for {} prices",
                dates.len(),
                values.len()
            )));
        }
        if values.len() < 2 {
            return Err(Error::Validation(
                "a price series needs at least 2 observations".into(),
            ));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Validation(format!(
                "price at position {i} is not strictly positive: {}",
                values[i]
            )));
        }
        if let Some(i) = dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "dates not strictly increasing at position {}: {} then {}",
                i + 1,
                dates[i],
                dates[i + 1]
            )));
        }
        Ok(Self {
            dates,
            values,
            label: label.into(),
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Column selection and parsing options for [`load_prices`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceColumns {
    pub date_col: String,
    pub price_col: String,
    /// chrono format string; ISO-8601 (`%Y-%m-%d`) when unset.
    #[serde(default)]
    pub date_format: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl Default for PriceColumns {
    fn default() -> Self {
        Self {
            date_col: "date".into(),
            price_col: "price".into(),
            date_format: None,
            delimiter: ',',
        }
    }
}

pub(crate) fn parse_date(
    raw: &str,
    format: Option<&str>,
) -> std::result::Result<NaiveDate, String> {
    let raw = raw.trim();
    match format {
        Some(f) => NaiveDate::parse_from_str(raw, f).map_err(|e| format!("bad date {raw:?}: {e}")),
        None => NaiveDate::parse_from_str(raw, "%Y-%m-%d")
            .or_else(|_| {
                // ISO timestamps: keep the calendar date.
                raw.get(..10)
                    .ok_or(())
                    .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|_| ()))
            })
            .map_err(|_| format!("bad ISO-8601 date {raw:?}")),
    }
}

fn parse_price(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    raw.parse::<f64>()
        .ok()
        .or_else(|| raw.replace([',', '_'], "").parse::<f64>().ok())
}

/// Loads a delimited price file with a header row. Rows are sorted by date;
/// duplicate dates and non-positive prices are rejected.
pub fn load_prices(path: impl AsRef<Path>, columns: &PriceColumns) -> Result<PriceSeries> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(columns.delimiter as u8)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Validation(format!("{}: {other:?}", path.display())),
        })?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row: 1,
                message: format!(
                    "no column named {name:?} in header {:?}",
                    headers.iter().collect::<Vec<_>>()
                ),
            })
    };
    let date_idx = find(&columns.date_col)?;
    let price_idx = find(&columns.price_col)?;

    let mut rows: Vec<(NaiveDate, f64, usize)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            row: line,
            message,
        };
        let date_raw = record
            .get(date_idx)
            .ok_or_else(|| parse_err("missing date field".into()))?;
        let price_raw = record
            .get(price_idx)
            .ok_or_else(|| parse_err("missing price field".into()))?;
        let date = parse_date(date_raw, columns.date_format.as_deref()).map_err(parse_err)?;
        let price =
            parse_price(price_raw).ok_or_else(|| parse_err(format!("bad price {price_raw:?}")))?;
        if !(price.is_finite() && price > 0.0) {
            return Err(Error::Validation(format!(
                "{} row {line}: price {price} is not strictly positive",
                path.display()
            )));
        }
        rows.push((date, price, line));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Validation(format!(
            "{}: duplicate date {} (rows {} and {})",
            path.display(),
            w[0].0,
            w[0].2,
            w[1].2
        )));
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (dates, values) = rows.into_iter().map(|(d, v, _)| (d, v)).unzip();
    PriceSeries::new(dates, values, label)
}

/// Log-returns with date alignment and clipping metadata.
///
/// `clip_mask[i] == true` marks an observation excluded from estimation. Masked
/// points stay in place so that windows remain addressable by date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
    /// Sample std of the unclipped values.
    pub sigma: f64,
    pub clip_mask: Vec<bool>,
    /// Multiplier used for the current mask, if any clipping was applied.
    pub clip_k: Option<f64>,
    /// Sampling interval between consecutive observations.
    pub step: f64,
}

impl ReturnSeries {
    /// Wraps an arbitrary state sequence (e.g. a simulated path) with unit spacing
    /// `step` and no clipping.
    pub fn from_values(dates: Vec<NaiveDate>, values: Vec<f64>, step: f64) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::Validation(format!(
                "{} dates for {} values",
                dates.len(),
                values.len()
            )));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Argument(format!(
                "sampling step must be positive, got {step}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at position {i}"
            )));
        }
        let sigma = stats::sample_std(&values);
        let n = values.len();
        Ok(Self {
            dates,
            values,
            sigma,
            clip_mask: vec![false; n],
            clip_k: None,
            step,
        })
    }

    /// Same as [`ReturnSeries::from_values`] with consecutive daily dates starting at 2000-01-01.
    pub fn synthetic(values: Vec<f64>, step: f64) -> Result<Self> {
        let dates = synthetic_dates(values.len());
        Self::from_values(dates, values, step)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_retained(&self, i: usize) -> bool {
        !self.clip_mask[i]
    }

    /// Values that survive the clip mask, in time order.
    pub fn retained_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.clip_mask)
            .filter(|(_, &m)| !m)
            .map(|(v, _)| *v)
            .collect()
    }

    pub fn clip_fraction(&self) -> f64 {
        if self.clip_mask.is_empty() {
            return 0.0;
        }
        self.clip_mask.iter().filter(|&&m| m).count() as f64 / self.clip_mask.len() as f64
    }

    /// Contiguous sub-series `[start, end)`, keeping the parent's sigma and mask.
    pub fn slice(&self, start: usize, end: usize) -> ReturnSeries {
        ReturnSeries {
            dates: self.dates[start..end].to_vec(),
            values: self.values[start..end].to_vec(),
            sigma: self.sigma,
            clip_mask: self.clip_mask[start..end].to_vec(),
            clip_k: self.clip_k,
            step: self.step,
        }
    }
}

/// Consecutive calendar days starting 2000-01-01, used to label synthetic data.
pub fn synthetic_dates(n: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    (0..n)
        .map(|i| {
            start
                .checked_add_days(Days::new(i as u64))
                .expect("date in range")
        })
        .collect()
}

/// `r_i = ln(S_{i+1} / S_i)`, dated at the later observation. Consecutive
/// observations are one unit step apart regardless of calendar gaps.
pub fn log_returns(prices: &PriceSeries) -> ReturnSeries {
    let values: Vec<f64> = prices
        .values
        .windows(2)
        .map(|w| (w[1] / w[0]).ln())
        .collect();
    let n = values.len();
    ReturnSeries {
        dates: prices.dates[1..].to_vec(),
        sigma: stats::sample_std(&values),
        values,
        clip_mask: vec![false; n],
        clip_k: None,
        step: 1.0,
    }
}

/// Marks every return with `|r| > k * sigma` as excluded. The mask depends only
/// on the unclipped sigma, so the operation is idempotent for a fixed `k`.
pub fn clip_returns(returns: &ReturnSeries, k: f64) -> Result<ReturnSeries> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::Argument(format!(
            "clip multiplier must be positive, got {k}"
        )));
    }
    let mut out = returns.clone();
    out.clip_k = Some(k);
    out.clip_mask = clip_mask(&returns.values, returns.sigma, k);
    Ok(out)
}

pub(crate) fn clip_mask(values: &[f64], sigma: f64, k: f64) -> Vec<bool> {
    if sigma == 0.0 {
        log::warn!("return standard deviation is zero; no points clipped");
        return vec![false; values.len()];
    }
    let bound = k * sigma;
    values.iter().map(|v| v.abs() > bound).collect()
}
