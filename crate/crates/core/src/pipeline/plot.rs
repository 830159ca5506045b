//! One tidy table per figure panel, for any external plotting tool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{io, BREAKS_DENSITY_FILE, PROFILE_FILE, RETURNS_FILE, TRACK_FILE};
use crate::error::{Error, Result};

const HISTOGRAM_BINS: usize = 100;

fn require(dir: &Path, file: &str, stage: &str) -> Result<PathBuf> {
    let p = dir.join(file);
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::MissingStage(format!(
            "{stage} ({} not found)",
            p.display()
        )))
    }
}

fn read_rows(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((headers, rows))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            message: format!("missing column {name:?}"),
        })
}

/// Writes `plot/fig1_returns.csv`, `plot/fig1_histogram.csv`, `plot/fig2_km.csv`,
/// `plot/fig3_track.csv` and `plot/fig4_density.csv` from the stage outputs in `dir`.
pub fn emit_plot_data(dir: &Path) -> Result<Vec<PathBuf>> {
    let returns_path = require(dir, RETURNS_FILE, "ingest")?;
    let profile_path = require(dir, PROFILE_FILE, "km")?;
    let track_path = require(dir, TRACK_FILE, "rolling")?;
    let density_path = require(dir, BREAKS_DENSITY_FILE, "breaks")?;
    let plot_dir = dir.join("plot");
    let mut written = Vec::new();

    let returns = io::read_returns(&returns_path, None)?;
    let fig1 = plot_dir.join("fig1_returns.csv");
    io::write_table(
        &fig1,
        &["date", "return"],
        returns
            .dates
            .iter()
            .zip(&returns.values)
            .map(|(d, v)| vec![d.to_string(), io::fmt_f64(*v)]),
    )?;
    written.push(fig1);

    let (lo, hi) = returns
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(*v), h.max(*v))
        });
    let width = if hi > lo {
        (hi - lo) / HISTOGRAM_BINS as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for v in &returns.values {
        counts[(((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1)] += 1;
    }
    let n = returns.len() as f64;
    let hist = plot_dir.join("fig1_histogram.csv");
    io::write_table(
        &hist,
        &["bin_center", "count", "density"],
        counts.iter().enumerate().map(|(i, &c)| {
            vec![
                io::fmt_f64(lo + width * (i as f64 + 0.5)),
                c.to_string(),
                io::fmt_f64(c as f64 / (n * width)),
            ]
        }),
    )?;
    written.push(hist);

    let (headers, rows) = read_rows(&profile_path)?;
    let cols: Vec<usize> = ["r_bin", "d1", "d2", "d4", "count"]
        .iter()
        .map(|c| column(&headers, c, &profile_path))
        .collect::<Result<_>>()?;
    let fig2 = plot_dir.join("fig2_km.csv");
    io::write_table(
        &fig2,
        &["r_bin", "d1", "d2", "d4", "count"],
        rows.iter().map(|r| {
            cols.iter()
                .map(|&c| r.get(c).unwrap_or("").to_string())
                .collect()
        }),
    )?;
    written.push(fig2);

    let track = io::read_track(&track_path)?;
    let by_date: BTreeMap<_, _> = track
        .times
        .iter()
        .enumerate()
        .map(|(i, d)| (*d, i))
        .collect();
    let fig3 = plot_dir.join("fig3_track.csv");
    io::write_table(
        &fig3,
        &["date", "return", "alpha", "beta"],
        returns.dates.iter().zip(&returns.values).map(|(d, v)| {
            let (a, b) = by_date
                .get(d)
                .map_or((None, None), |&i| (track.alpha[i], track.beta[i]));
            vec![
                d.to_string(),
                io::fmt_f64(*v),
                io::fmt_opt(a),
                io::fmt_opt(b),
            ]
        }),
    )?;
    written.push(fig3);

    let (headers, rows) = read_rows(&density_path)?;
    let start = column(&headers, "bin_start_date", &density_path)?;
    let count = column(&headers, "break_count", &density_path)?;
    let fig4 = plot_dir.join("fig4_density.csv");
    io::write_table(
        &fig4,
        &["bin_start_date", "break_count"],
        rows.iter().map(|r| {
            vec![
                r.get(start).unwrap_or("").to_string(),
                r.get(count).unwrap_or("").to_string(),
            ]
        }),
    )?;
    written.push(fig4);
    Ok(written)
}
