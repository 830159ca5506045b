//! Delimited-text and JSON artifact formats.
//!
//! Floats in delimited files are written with 17 significant digits so that every
//! value reads back bit-for-bit; undefined entries are written as `NaN`.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::changepoint::BreakpointReport;
use crate::error::{Error, Result};
use crate::ingest::{parse_date, ReturnSeries};
use crate::km::KmProfile;
use crate::rolling::CoefficientTrack;

/// 17 significant digits, round-trip exact.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), fmt_f64)
}

fn parse_opt(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    raw.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Writes a header plus rows of pre-formatted fields.
pub fn write_table(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().from_writer(std::io::BufWriter::new(file));
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Sidecar written next to a returns file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnsMeta {
    pub label: String,
    pub n: usize,
    pub sigma: f64,
    pub clip_k: f64,
    pub clip_fraction: f64,
    pub step: f64,
}

pub fn meta_path(returns_path: &Path) -> PathBuf {
    returns_path.with_extension("meta.json")
}

/// Canonical `date,return` file plus its metadata sidecar.
pub fn write_returns(path: &Path, series: &ReturnSeries, label: &str, clip_k: f64) -> Result<()> {
    write_table(
        path,
        &["date", "return"],
        series
            .dates
            .iter()
            .zip(&series.values)
            .map(|(d, v)| vec![d.to_string(), fmt_f64(*v)]),
    )?;
    let clipped = crate::ingest::clip_returns(series, clip_k)?;
    let meta = ReturnsMeta {
        label: label.to_string(),
        n: series.len(),
        sigma: series.sigma,
        clip_k,
        clip_fraction: clipped.clip_fraction(),
        step: series.step,
    };
    write_json(&meta_path(path), &meta)
}

/// Reads a two-column `date,<value>` file. The sampling step comes from `step`, else
/// from the sidecar if one exists, else 1.
pub fn read_returns(path: &Path, step: Option<f64>) -> Result<ReturnSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Validation(format!("{}: {other:?}", path.display())),
        })?;
    let headers = reader.headers()?.clone();
    let value_idx = ["return", "value"]
        .iter()
        .find_map(|name| headers.iter().position(|h| h == *name))
        .unwrap_or(1);
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            message,
        };
        let date = parse_date(record.get(0).unwrap_or(""), None).map_err(err)?;
        let raw = record.get(value_idx).unwrap_or("");
        let v: f64 = raw.parse().map_err(|_| err(format!("bad value {raw:?}")))?;
        dates.push(date);
        values.push(v);
    }
    if let Some(i) = dates.windows(2).position(|w| w[0] >= w[1]) {
        return Err(Error::Validation(format!(
            "{}: dates not strictly increasing at data row {}",
            path.display(),
            i + 2
        )));
    }
    let step = match step {
        Some(s) => s,
        None => {
            let meta = meta_path(path);
            if meta.exists() {
                read_json::<ReturnsMeta>(&meta)?.step
            } else {
                1.0
            }
        }
    };
    ReturnSeries::from_values(dates, values, step)
}

pub fn write_profile(path: &Path, profile: &KmProfile) -> Result<()> {
    let col =
        |c: &Option<Vec<f64>>, b: usize| c.as_ref().map_or_else(|| "NaN".into(), |v| fmt_f64(v[b]));
    write_table(
        path,
        &["r_bin", "d1", "d2", "d4", "count", "valid"],
        (0..profile.n_bins()).map(|b| {
            vec![
                fmt_f64(profile.bin_centers[b]),
                col(&profile.d1, b),
                col(&profile.d2, b),
                col(&profile.d4, b),
                profile.counts[b].to_string(),
                profile.valid[b].to_string(),
            ]
        }),
    )
}

pub fn write_track(path: &Path, track: &CoefficientTrack) -> Result<()> {
    write_table(
        path,
        &["date", "alpha", "beta", "gamma", "delta", "pass_fraction"],
        (0..track.len()).map(|i| {
            vec![
                track.times[i].to_string(),
                fmt_opt(track.alpha[i]),
                fmt_opt(track.beta[i]),
                fmt_opt(track.gamma[i]),
                fmt_opt(track.delta[i]),
                fmt_f64(track.pass_fraction[i]),
            ]
        }),
    )
}

/// Reads a track file. `end_index` is the row position, since the file carries dates only.
pub fn read_track(path: &Path) -> Result<CoefficientTrack> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Validation(format!("{}: {other:?}", path.display())),
        })?;
    let headers = reader.headers()?.clone();
    let idx = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row: 1,
                message: format!("missing column {name:?}"),
            })
    };
    let (di, ai, bi, gi, ei, pi) = (
        idx("date")?,
        idx("alpha")?,
        idx("beta")?,
        idx("gamma")?,
        idx("delta")?,
        idx("pass_fraction")?,
    );
    let mut t = CoefficientTrack {
        times: Vec::new(),
        end_index: Vec::new(),
        alpha: Vec::new(),
        beta: Vec::new(),
        gamma: Vec::new(),
        delta: Vec::new(),
        pass_fraction: Vec::new(),
    };
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let date: NaiveDate =
            parse_date(record.get(di).unwrap_or(""), None).map_err(|message| Error::Parse {
                path: path.to_path_buf(),
                row,
                message,
            })?;
        let get = |j: usize| parse_opt(record.get(j).unwrap_or(""));
        t.times.push(date);
        t.end_index.push(i);
        t.alpha.push(get(ai));
        t.beta.push(get(bi));
        t.gamma.push(get(gi));
        t.delta.push(get(ei));
        t.pass_fraction.push(get(pi).unwrap_or(0.0));
    }
    Ok(t)
}

pub fn write_breaks(dir: &Path, report: &BreakpointReport) -> Result<Vec<PathBuf>> {
    let json = dir.join("breaks.json");
    let table = dir.join("breaks.csv");
    let density = dir.join("density.csv");
    write_json(&json, report)?;
    let rows = [
        ("alpha", &report.alpha_breaks),
        ("beta", &report.beta_breaks),
        ("union", &report.union_breaks),
    ]
    .into_iter()
    .flat_map(|(name, list)| {
        list.iter()
            .map(move |b| vec![name.to_string(), b.index.to_string(), b.date.to_string()])
    });
    write_table(&table, &["series", "index", "date"], rows)?;
    write_table(
        &density,
        &["bin_start_date", "bin_end_date", "break_count"],
        report
            .density
            .iter()
            .map(|b| vec![b.start.to_string(), b.end.to_string(), b.count.to_string()]),
    )?;
    Ok(vec![json, table, density])
}
