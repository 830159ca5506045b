//! Rolling-window drift/diffusion tracks and their window-size sensitivity.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, ReturnSeries};
use crate::km::{self, DiffusionFit, DriftFit, KmConfig, Orders};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    /// Clip with the whole-series sigma.
    Global,
    /// Clip each window with its own sigma.
    PerWindow,
}

impl std::str::FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SigmaMode::Global),
            "per-window" => Ok(SigmaMode::PerWindow),
            other => Err(Error::Argument(format!(
                "unknown sigma mode {other:?} (global | per-window)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RollingConfig {
    pub window_length: usize,
    pub step: usize,
    pub bin_counts: Vec<usize>,
    pub r2_threshold: f64,
    pub clip_k: f64,
    pub sigma_mode: SigmaMode,
    pub min_count: usize,
    pub diffusion_constant_term: bool,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self {
            window_length: 2000,
            step: 10,
            bin_counts: (30..=100).step_by(5).collect(),
            r2_threshold: 0.8,
            clip_k: ingest::DEFAULT_CLIP_K,
            sigma_mode: SigmaMode::PerWindow,
            min_count: km::DEFAULT_MIN_COUNT,
            diffusion_constant_term: false,
        }
    }
}

impl RollingConfig {
    pub fn with_window(window_length: usize) -> Self {
        Self {
            window_length,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let min_bins = self
            .bin_counts
            .iter()
            .copied()
            .min()
            .ok_or_else(|| Error::Argument("bin_counts is empty".into()))?;
        if self.window_length < 10 * min_bins {
            return Err(Error::Argument(format!(
                "window of {} observations is shorter than 10 x {min_bins} bins",
                self.window_length
            )));
        }
        if self.step == 0 {
            return Err(Error::Argument("step must be at least 1".into()));
        }
        if !(self.r2_threshold > 0.0 && self.r2_threshold <= 1.0) {
            return Err(Error::Argument(format!(
                "R^2 threshold {} outside (0, 1]",
                self.r2_threshold
            )));
        }
        if !(self.clip_k.is_finite() && self.clip_k > 0.0) {
            return Err(Error::Argument(format!(
                "clip multiplier {} must be positive",
                self.clip_k
            )));
        }
        Ok(())
    }
}

/// Parses `start:end:step` (inclusive) or a comma-separated list of bin counts.
pub fn parse_bin_counts(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Argument(format!("bad bin-count spec {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let counts: Vec<usize> = match parts.as_slice() {
        [start, end, step] => {
            let (a, b, s): (usize, usize, usize) = (
                start.trim().parse().map_err(|_| bad())?,
                end.trim().parse().map_err(|_| bad())?,
                step.trim().parse().map_err(|_| bad())?,
            );
            if s == 0 || a > b {
                return Err(bad());
            }
            (a..=b).step_by(s).collect()
        }
        [list] => list
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?,
        _ => return Err(bad()),
    };
    if counts.is_empty() {
        return Err(bad());
    }
    Ok(counts)
}

/// Time-indexed coefficients. Windows where no bin configuration passed the R²
/// gate hold `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTrack {
    /// Date of each window's last observation.
    pub times: Vec<NaiveDate>,
    /// Series index of each window's last observation.
    pub end_index: Vec<usize>,
    pub alpha: Vec<Option<f64>>,
    pub beta: Vec<Option<f64>>,
    pub gamma: Vec<Option<f64>>,
    pub delta: Vec<Option<f64>>,
    pub pass_fraction: Vec<f64>,
}

impl CoefficientTrack {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn defined_count(&self) -> usize {
        self.alpha.iter().filter(|a| a.is_some()).count()
    }

    pub fn coefficient(&self, c: Coefficient) -> &[Option<f64>] {
        match c {
            Coefficient::Alpha => &self.alpha,
            Coefficient::Beta => &self.beta,
            Coefficient::Gamma => &self.gamma,
            Coefficient::Delta => &self.delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coefficient {
    Alpha,
    Beta,
    Gamma,
    Delta,
}

impl Coefficient {
    pub const ALL: [Coefficient; 4] = [
        Coefficient::Alpha,
        Coefficient::Beta,
        Coefficient::Gamma,
        Coefficient::Delta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Coefficient::Alpha => "alpha",
            Coefficient::Beta => "beta",
            Coefficient::Gamma => "gamma",
            Coefficient::Delta => "delta",
        }
    }
}

/// Fits for one bin count inside one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigFit {
    pub n_bins: usize,
    pub drift: DriftFit,
    pub diffusion: DiffusionFit,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEstimate {
    /// One entry per bin count whose estimation and fits succeeded.
    pub fits: Vec<ConfigFit>,
    pub attempted: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
}

impl WindowEstimate {
    pub fn pass_fraction(&self) -> f64 {
        if self.attempted == 0 {
            return 0.0;
        }
        self.fits.iter().filter(|f| f.passed).count() as f64 / self.attempted as f64
    }
}

/// Runs the bin-count sweep on one window. A configuration contributes only if both
/// its drift and its diffusion R² reach the threshold; failed estimations count as
/// attempts that did not pass.
pub fn estimate_window(
    values: &[f64],
    mask: &[bool],
    step: f64,
    cfg: &RollingConfig,
) -> WindowEstimate {
    let mut fits = Vec::with_capacity(cfg.bin_counts.len());
    for &n_bins in &cfg.bin_counts {
        let km_cfg = KmConfig {
            n_bins,
            min_count: cfg.min_count,
            orders: Orders::DRIFT_DIFFUSION,
        };
        let Ok(profile) = km::estimate_km_on(values, mask, step, &km_cfg) else {
            continue;
        };
        let (Ok(drift), Ok(diffusion)) = (
            km::fit_drift(&profile),
            km::fit_diffusion(&profile, cfg.diffusion_constant_term),
        ) else {
            continue;
        };
        let passed = drift.r_squared >= cfg.r2_threshold
            && diffusion.r_squared >= cfg.r2_threshold
            && drift.alpha.is_finite()
            && diffusion.beta.is_finite();
        fits.push(ConfigFit {
            n_bins,
            drift,
            diffusion,
            passed,
        });
    }
    let passing: Vec<&ConfigFit> = fits.iter().filter(|f| f.passed).collect();
    let avg = |get: fn(&ConfigFit) -> f64| -> Option<f64> {
        (!passing.is_empty())
            .then(|| passing.iter().map(|f| get(f)).sum::<f64>() / passing.len() as f64)
    };
    WindowEstimate {
        alpha: avg(|f| f.drift.alpha),
        gamma: avg(|f| f.drift.gamma),
        beta: avg(|f| f.diffusion.beta),
        delta: avg(|f| f.diffusion.delta),
        attempted: cfg.bin_counts.len(),
        fits,
    }
}

/// Slides a `window_length` window in strides of `step` and estimates each window
/// independently. Windows are timestamped by their last observation.
pub fn rolling_estimate(series: &ReturnSeries, cfg: &RollingConfig) -> Result<CoefficientTrack> {
    cfg.validate()?;
    let n = series.len();
    if cfg.window_length > n {
        return Err(Error::Argument(format!(
            "window of {} observations is longer than the series ({n})",
            cfg.window_length
        )));
    }
    let global_mask = match cfg.sigma_mode {
        SigmaMode::Global => Some(ingest::clip_mask(&series.values, series.sigma, cfg.clip_k)),
        SigmaMode::PerWindow => None,
    };
    let starts: Vec<usize> = (0..=n - cfg.window_length).step_by(cfg.step).collect();
    let estimates: Vec<WindowEstimate> = starts
        .par_iter()
        .map(|&s| {
            let e = s + cfg.window_length;
            let values = &series.values[s..e];
            let mask = match &global_mask {
                Some(m) => m[s..e].to_vec(),
                None => {
                    let sigma = stats::sample_std(values);
                    if sigma == 0.0 {
                        vec![false; values.len()]
                    } else {
                        values
                            .iter()
                            .map(|v| v.abs() > cfg.clip_k * sigma)
                            .collect()
                    }
                }
            };
            estimate_window(values, &mask, series.step, cfg)
        })
        .collect();

    let mut track = CoefficientTrack {
        times: Vec::with_capacity(starts.len()),
        end_index: Vec::with_capacity(starts.len()),
        alpha: Vec::with_capacity(starts.len()),
        beta: Vec::with_capacity(starts.len()),
        gamma: Vec::with_capacity(starts.len()),
        delta: Vec::with_capacity(starts.len()),
        pass_fraction: Vec::with_capacity(starts.len()),
    };
    for (s, est) in starts.iter().zip(&estimates) {
        let last = s + cfg.window_length - 1;
        track.times.push(series.dates[last]);
        track.end_index.push(last);
        track.alpha.push(est.alpha);
        track.beta.push(est.beta);
        track.gamma.push(est.gamma);
        track.delta.push(est.delta);
        track.pass_fraction.push(est.pass_fraction());
    }
    if track.defined_count() == 0 {
        log::warn!("no window passed the R^2 >= {} gate", cfg.r2_threshold);
    }
    Ok(track)
}

/// Per-coefficient series on the baseline time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSeries {
    pub alpha: Vec<Option<f64>>,
    pub beta: Vec<Option<f64>>,
    pub gamma: Vec<Option<f64>>,
    pub delta: Vec<Option<f64>>,
}

impl CoefficientSeries {
    pub fn get(&self, c: Coefficient) -> &[Option<f64>] {
        match c {
            Coefficient::Alpha => &self.alpha,
            Coefficient::Beta => &self.beta,
            Coefficient::Gamma => &self.gamma,
            Coefficient::Delta => &self.delta,
        }
    }

    fn from_fn(mut f: impl FnMut(Coefficient) -> Vec<Option<f64>>) -> Self {
        Self {
            alpha: f(Coefficient::Alpha),
            beta: f(Coefficient::Beta),
            gamma: f(Coefficient::Gamma),
            delta: f(Coefficient::Delta),
        }
    }
}

/// Scalar per coefficient; `None` when no time point was comparable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
}

impl CoefficientSummary {
    pub fn get(&self, c: Coefficient) -> Option<f64> {
        match c {
            Coefficient::Alpha => self.alpha,
            Coefficient::Beta => self.beta,
            Coefficient::Gamma => self.gamma,
            Coefficient::Delta => self.delta,
        }
    }
}

/// Deviation of one alternative window size from the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeDeviation {
    pub window: usize,
    /// `|alt - baseline|` per baseline time point.
    pub deviation: CoefficientSeries,
    pub mean_deviation: CoefficientSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub baseline_window: usize,
    pub alt_windows: Vec<usize>,
    pub times: Vec<NaiveDate>,
    pub baseline: CoefficientTrack,
    pub alternatives: Vec<AlternativeDeviation>,
    /// Per time point: root-mean-square of `alt - baseline` over the alternatives.
    pub deviation_std: CoefficientSeries,
    /// Time average of `deviation_std`.
    pub mean_deviation_std: CoefficientSummary,
}

/// Linear interpolation of the defined entries of `(xs, ys)` at `x`. Brackets wider
/// than `max_gap` are treated as holes.
fn interpolate(xs: &[usize], ys: &[Option<f64>], x: usize, max_gap: usize) -> Option<f64> {
    let pos = xs.partition_point(|&v| v < x);
    if pos < xs.len() && xs[pos] == x {
        if let Some(y) = ys[pos] {
            return Some(y);
        }
    }
    let left = (0..pos).rev().find(|&i| ys[i].is_some())?;
    let right = (pos..xs.len()).find(|&i| ys[i].is_some())?;
    if xs[right] - xs[left] > max_gap {
        return None;
    }
    Some(stats::lerp_at(
        xs[left] as f64,
        ys[left]?,
        xs[right] as f64,
        ys[right]?,
        x as f64,
    ))
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| stats::mean(&d))
}

/// Re-estimates the track for every alternative window length, interpolates each
/// onto the baseline grid (by series index) and measures its deviation.
pub fn sensitivity(
    series: &ReturnSeries,
    cfg: &RollingConfig,
    alt_windows: &[usize],
) -> Result<SensitivityReport> {
    let baseline = rolling_estimate(series, cfg)?;
    let max_gap = 3 * cfg.step;
    let mut alternatives = Vec::with_capacity(alt_windows.len());
    let mut diffs: Vec<CoefficientSeries> = Vec::with_capacity(alt_windows.len());
    for &w in alt_windows {
        if w > series.len() {
            return Err(Error::Argument(format!(
                "alternative window {w} is longer than the series ({})",
                series.len()
            )));
        }
        let alt_cfg = RollingConfig {
            window_length: w,
            ..cfg.clone()
        };
        let alt = rolling_estimate(series, &alt_cfg)?;
        let (alt_lo, alt_hi) = (alt.end_index[0], *alt.end_index.last().unwrap());
        let overlaps = baseline
            .end_index
            .iter()
            .any(|&x| x >= alt_lo && x <= alt_hi);
        if !overlaps {
            return Err(Error::Argument(format!(
                "window {w}: no overlap with the baseline time grid"
            )));
        }
        let diff = CoefficientSeries::from_fn(|c| {
            baseline
                .end_index
                .iter()
                .zip(baseline.coefficient(c))
                .map(|(&x, base)| {
                    let a = interpolate(&alt.end_index, alt.coefficient(c), x, max_gap)?;
                    Some(a - (*base)?)
                })
                .collect()
        });
        let deviation =
            CoefficientSeries::from_fn(|c| diff.get(c).iter().map(|d| d.map(f64::abs)).collect());
        let mean_deviation = CoefficientSummary {
            alpha: mean_defined(&deviation.alpha),
            beta: mean_defined(&deviation.beta),
            gamma: mean_defined(&deviation.gamma),
            delta: mean_defined(&deviation.delta),
        };
        alternatives.push(AlternativeDeviation {
            window: w,
            deviation,
            mean_deviation,
        });
        diffs.push(diff);
    }
    let deviation_std = CoefficientSeries::from_fn(|c| {
        (0..baseline.len())
            .map(|t| {
                let d: Vec<f64> = diffs.iter().filter_map(|s| s.get(c)[t]).collect();
                (!d.is_empty())
                    .then(|| (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt())
            })
            .collect()
    });
    let mean_deviation_std = CoefficientSummary {
        alpha: mean_defined(&deviation_std.alpha),
        beta: mean_defined(&deviation_std.beta),
        gamma: mean_defined(&deviation_std.gamma),
        delta: mean_defined(&deviation_std.delta),
    };
    Ok(SensitivityReport {
        baseline_window: cfg.window_length,
        alt_windows: alt_windows.to_vec(),
        times: baseline.times.clone(),
        baseline,
        alternatives,
        deviation_std,
        mean_deviation_std,
    })
}
