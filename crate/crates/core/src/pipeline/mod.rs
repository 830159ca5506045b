//! Stage runners, run manifests and plot-ready outputs.
//!
//! Every stage reads its inputs from the files written by the previous stage, so a
//! downstream stage can be re-run on cached upstream artifacts and produce the same
//! bytes as a full run.

mod config;
pub mod io;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{
    BreaksConfig, DiagnosticsConfig, InputConfig, InputKind, KmStageConfig, PipelineConfig,
    RollingStageConfig, SegmentSpec, SimulationConfig,
};
pub use plot::emit_plot_data;

use crate::changepoint::{self, SegmentationConfig};
use crate::diagnostics::{self, MarkovConfig, MarkovTestResult, StationarityCurve};
use crate::error::{Error, Result};
use crate::ingest::{self, ReturnSeries};
use crate::km::{self, DiffusionFit, DriftFit, KmConfig, Orders};
use crate::langevin;
use crate::rolling;

pub const RETURNS_FILE: &str = "returns.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const STATIONARITY_FILE: &str = "stationarity.csv";
pub const MARKOV_FILE: &str = "markov.csv";
pub const PROFILE_FILE: &str = "km_profile.csv";
pub const KM_FIT_FILE: &str = "km_fit.json";
pub const TRACK_FILE: &str = "track.csv";
pub const SENSITIVITY_FILE: &str = "sensitivity.json";
pub const BREAKS_DENSITY_FILE: &str = "density.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const STAGES: [&str; 5] = ["ingest", "diagnose", "km", "rolling", "breaks"];

/// Loads the configured input (prices, a returns file or a simulation) as returns
/// plus a label for the metadata sidecar.
pub fn load_input(cfg: &PipelineConfig) -> Result<(ReturnSeries, String)> {
    Ok(match (&cfg.input, &cfg.simulate) {
        (Some(input), _) => match input.kind {
            InputKind::Prices => {
                let prices = ingest::load_prices(&input.path, &input.columns())?;
                let mut r = ingest::log_returns(&prices);
                if let Some(step) = cfg.step {
                    r.step = step;
                }
                (r, prices.label().to_string())
            }
            InputKind::Returns => {
                let r = io::read_returns(&input.path, cfg.step)?;
                let label = input
                    .path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                (r, label)
            }
        },
        (None, Some(sim)) => {
            let path = langevin::synthetic_regime_series(&sim.models(), cfg.seed)?;
            let step = cfg.step.unwrap_or(sim.dt);
            (
                ReturnSeries::synthetic(path.values, step)?,
                "synthetic".to_string(),
            )
        }
        (None, None) => return Err(Error::Config("no input configured".into())),
    })
}

/// Writes the canonical returns file and its metadata sidecar to `out`.
pub fn stage_ingest(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (series, label) = load_input(cfg)?;
    io::write_returns(out, &series, &label, cfg.clip_k)?;
    Ok(vec![out.to_path_buf(), io::meta_path(out)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub clip_k: f64,
    pub n_bins: usize,
    pub min_occupancy: usize,
    pub stationarity: StationarityCurve,
    pub markov: MarkovTestResult,
}

fn default_window_sizes(n: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut s = 2.0_f64;
    while (s as usize) <= n / 2 {
        sizes.push(s as usize);
        s *= 1.5;
    }
    sizes.dedup();
    sizes
}

pub fn diagnose(
    series: &ReturnSeries,
    cfg: &DiagnosticsConfig,
    clip_k: f64,
) -> Result<DiagnosticsReport> {
    let clipped = ingest::clip_returns(series, clip_k)?;
    let sizes = cfg
        .window_sizes
        .clone()
        .unwrap_or_else(|| default_window_sizes(clipped.retained_values().len()));
    let stationarity = diagnostics::sliding_variance(&clipped, &sizes)?;
    let markov_cfg = MarkovConfig {
        n_bins: cfg.bins,
        min_occupancy: cfg.min_occupancy,
    };
    let markov = diagnostics::markov_test(&clipped, &cfg.lags, &markov_cfg)?;
    Ok(DiagnosticsReport {
        clip_k,
        n_bins: cfg.bins,
        min_occupancy: cfg.min_occupancy,
        stationarity,
        markov,
    })
}

pub fn stage_diagnose(
    returns: &Path,
    cfg: &DiagnosticsConfig,
    clip_k: f64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let series = io::read_returns(returns, None)?;
    let report = diagnose(&series, cfg, clip_k)?;
    let json = out_dir.join(DIAGNOSTICS_FILE);
    let stat = out_dir.join(STATIONARITY_FILE);
    let markov = out_dir.join(MARKOV_FILE);
    io::write_json(&json, &report)?;
    io::write_table(
        &stat,
        &["window_size", "w"],
        report
            .stationarity
            .window_sizes
            .iter()
            .zip(&report.stationarity.w_values)
            .map(|(s, w)| vec![s.to_string(), io::fmt_f64(*w)]),
    )?;
    let fit = |t: usize| match (report.markov.amplitude, report.markov.markov_length) {
        (Some(a), Some(tm)) => io::fmt_f64(a * (-(t as f64) / tm).exp()),
        _ => "NaN".into(),
    };
    io::write_table(
        &markov,
        &["lag", "q_m", "q_fit"],
        report
            .markov
            .lags
            .iter()
            .zip(&report.markov.q_values)
            .map(|(t, q)| vec![t.to_string(), io::fmt_f64(*q), fit(*t)]),
    )?;
    Ok(vec![json, stat, markov])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PawulaSummary {
    pub max_ratio: Option<f64>,
    pub undefined_bins: usize,
    /// Gaussian-increment prediction `step / 2` for `d4 / d2^2`.
    pub gaussian_prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmReport {
    pub n_bins: usize,
    pub min_count: usize,
    pub orders: String,
    pub clip_k: f64,
    pub step: f64,
    pub transitions: usize,
    pub valid_bins: usize,
    pub drift: DriftFit,
    pub diffusion: DiffusionFit,
    pub mean_d2: Option<f64>,
    pub pawula: Option<PawulaSummary>,
}

/// Whole-series estimation: clip, bin, fit.
pub fn km_analysis(
    series: &ReturnSeries,
    cfg: &KmStageConfig,
    clip_k: f64,
) -> Result<(km::KmProfile, KmReport)> {
    let orders: Orders = cfg.orders.parse()?;
    let clipped = ingest::clip_returns(series, clip_k)?;
    let km_cfg = KmConfig {
        n_bins: cfg.bins,
        min_count: cfg.min_count,
        orders: Orders {
            d1: true,
            d2: true,
            ..orders
        },
    };
    let profile = km::estimate_km(&clipped, &km_cfg)?;
    let drift = km::fit_drift(&profile)?;
    let diffusion = km::fit_diffusion(&profile, cfg.diffusion_constant_term)?;
    let pawula = if orders.d4 {
        let p = km::pawula_ratio(&profile)?;
        Some(PawulaSummary {
            max_ratio: p.max(),
            undefined_bins: p.undefined_bins(),
            gaussian_prediction: profile.step / 2.0,
        })
    } else {
        None
    };
    let report = KmReport {
        n_bins: cfg.bins,
        min_count: cfg.min_count,
        orders: orders.to_string(),
        clip_k,
        step: profile.step,
        transitions: profile.total_count(),
        valid_bins: profile.valid_bins().count(),
        drift,
        diffusion,
        mean_d2: profile.weighted_mean_d2(),
        pawula,
    };
    Ok((profile, report))
}

pub fn stage_km(
    returns: &Path,
    cfg: &KmStageConfig,
    clip_k: f64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let series = io::read_returns(returns, None)?;
    let (profile, report) = km_analysis(&series, cfg, clip_k)?;
    let table = out_dir.join(PROFILE_FILE);
    let json = out_dir.join(KM_FIT_FILE);
    io::write_profile(&table, &profile)?;
    io::write_json(&json, &report)?;
    Ok(vec![table, json])
}

pub fn stage_rolling(
    returns: &Path,
    cfg: &RollingStageConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let series = io::read_returns(returns, None)?;
    let track_path = out_dir.join(TRACK_FILE);
    if cfg.alt_windows.is_empty() {
        let track = rolling::rolling_estimate(&series, &cfg.rolling)?;
        io::write_track(&track_path, &track)?;
        Ok(vec![track_path])
    } else {
        let report = rolling::sensitivity(&series, &cfg.rolling, &cfg.alt_windows)?;
        io::write_track(&track_path, &report.baseline)?;
        let sens = out_dir.join(SENSITIVITY_FILE);
        io::write_json(&sens, &report)?;
        Ok(vec![track_path, sens])
    }
}

pub fn stage_breaks(track: &Path, cfg: &BreaksConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let track = io::read_track(track)?;
    let seg = SegmentationConfig {
        n_breakpoints: cfg.n_bkps,
        min_segment: cfg.min_segment,
        jump: cfg.jump,
    };
    let report = changepoint::track_breakpoints(&track, &seg, cfg.bin_months)?;
    io::write_breaks(out_dir, &report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub outputs: Vec<OutputFile>,
}

/// Record of a run: configuration, input hash and every output's hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub config: serde_json::Value,
    pub input_sha256: String,
    pub stages: Vec<StageRecord>,
    pub plot_data: Vec<OutputFile>,
    /// Set when a stage failed; the stage list then holds the completed stages only.
    pub failed_stage: Option<String>,
    pub error: Option<String>,
}

fn record(out_dir: &Path, files: &[PathBuf]) -> Result<Vec<OutputFile>> {
    files
        .iter()
        .map(|f| {
            let rel = f.strip_prefix(out_dir).unwrap_or(f);
            Ok(OutputFile {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: io::sha256_file(f)?,
            })
        })
        .collect()
}

/// Runs ingest, diagnose, km, rolling and breaks, writes the plot data, and writes
/// `manifest.json` last. A failing stage still leaves a manifest describing the
/// completed stages.
pub fn run_full(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let out = cfg.output_dir.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        config: serde_json::to_value(cfg)?,
        input_sha256: String::new(),
        stages: Vec::new(),
        plot_data: Vec::new(),
        failed_stage: None,
        error: None,
    };
    let returns = out.join(RETURNS_FILE);
    let track = out.join(TRACK_FILE);

    for name in STAGES {
        let result = match name {
            "ingest" => stage_ingest(cfg, &returns),
            "diagnose" => stage_diagnose(&returns, &cfg.diagnostics, cfg.clip_k, out),
            "km" => stage_km(&returns, &cfg.km, cfg.clip_k, out),
            "rolling" => stage_rolling(&returns, &cfg.rolling, out),
            "breaks" => stage_breaks(&track, &cfg.breaks, out),
            _ => unreachable!(),
        }
        .and_then(|files| record(out, &files));
        match result {
            Ok(outputs) => {
                if name == "ingest" {
                    manifest.input_sha256 = match &cfg.input {
                        Some(input) => io::sha256_file(&input.path)?,
                        None => outputs[0].sha256.clone(),
                    };
                }
                manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    outputs,
                });
            }
            Err(e) => {
                let e = e.in_stage(name);
                manifest.failed_stage = Some(name.to_string());
                manifest.error = Some(e.to_string());
                io::write_json(&out.join(MANIFEST_FILE), &manifest)?;
                return Err(e);
            }
        }
    }
    match emit_plot_data(out).and_then(|files| record(out, &files)) {
        Ok(files) => manifest.plot_data = files,
        Err(e) => {
            let e = e.in_stage("plot");
            manifest.failed_stage = Some("plot".into());
            manifest.error = Some(e.to_string());
            io::write_json(&out.join(MANIFEST_FILE), &manifest)?;
            return Err(e);
        }
    }
    io::write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
