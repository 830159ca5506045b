//! Binned Kramers–Moyal coefficients and their polynomial fits.
//!
//! For bins of the conditioning value `x`, the estimator is
//!
//! ```text
//! D_n(x) = 1 / (n! * dt) * < (X[i+1] - X[i])^n | X[i] in bin(x) >
//! ```
//!
//! The `1/n!` factor makes `D1 = a(x)` and `D2 = b(x)^2 / 2` for a Langevin model
//! `dx = a dt + b dW`, the same convention used by [`crate::langevin`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ReturnSeries;
use crate::stats::weighted_least_squares;

pub const DEFAULT_MIN_COUNT: usize = 10;

/// Moment normalisation recorded in every [`KmProfile`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convention {
    /// Raw conditional moment divided by `n!`.
    Factorial,
}

/// Which coefficient orders to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orders {
    pub d1: bool,
    pub d2: bool,
    pub d4: bool,
}

impl Orders {
    pub const ALL: Orders = Orders {
        d1: true,
        d2: true,
        d4: true,
    };
    pub const DRIFT_DIFFUSION: Orders = Orders {
        d1: true,
        d2: true,
        d4: false,
    };
}

impl Default for Orders {
    fn default() -> Self {
        Orders::ALL
    }
}

impl FromStr for Orders {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut o = Orders {
            d1: false,
            d2: false,
            d4: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "1" => o.d1 = true,
                "2" => o.d2 = true,
                "4" => o.d4 = true,
                other => {
                    return Err(Error::Argument(format!(
                        "unsupported Kramers-Moyal order {other:?} (choose from 1, 2, 4)"
                    )))
                }
            }
        }
        if !(o.d1 || o.d2 || o.d4) {
            return Err(Error::Argument("no orders selected".into()));
        }
        Ok(o)
    }
}

impl fmt::Display for Orders {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.d1, "1"), (self.d2, "2"), (self.d4, "4")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, s)| *s)
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmConfig {
    pub n_bins: usize,
    pub min_count: usize,
    pub orders: Orders,
}

impl KmConfig {
    pub fn new(n_bins: usize) -> Self {
        Self {
            n_bins,
            min_count: DEFAULT_MIN_COUNT,
            orders: Orders::ALL,
        }
    }
}

/// Per-bin conditional-moment estimates.
///
/// Empty bins carry `NaN` coefficients; bins below `min_count` are computed but
/// flagged invalid and ignored by the fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmProfile {
    pub edges: Vec<f64>,
    pub bin_centers: Vec<f64>,
    pub counts: Vec<usize>,
    pub valid: Vec<bool>,
    pub d1: Option<Vec<f64>>,
    pub d2: Option<Vec<f64>>,
    pub d4: Option<Vec<f64>>,
    /// Sampling interval the coefficients are expressed in.
    pub step: f64,
    pub min_count: usize,
    pub convention: Convention,
}

impl KmProfile {
    pub fn n_bins(&self) -> usize {
        self.bin_centers.len()
    }

    pub fn total_count(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn valid_bins(&self) -> impl Iterator<Item = usize> + '_ {
        self.valid
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| i)
    }

    /// Count-weighted mean of `d2` over valid bins.
    pub fn weighted_mean_d2(&self) -> Option<f64> {
        let d2 = self.d2.as_ref()?;
        let (mut num, mut den) = (0.0, 0.0);
        for b in self.valid_bins() {
            num += self.counts[b] as f64 * d2[b];
            den += self.counts[b] as f64;
        }
        (den > 0.0).then(|| num / den)
    }
}

/// Estimates D1, D2 and/or D4 on `n_bins` equal-width bins spanning the retained
/// value range. A transition `(X[i], X[i+1])` contributes when `X[i]` is unmasked;
/// the target may lie outside the clip range.
pub fn estimate_km(series: &ReturnSeries, cfg: &KmConfig) -> Result<KmProfile> {
    estimate_km_on(&series.values, &series.clip_mask, series.step, cfg)
}

pub(crate) fn estimate_km_on(
    values: &[f64],
    mask: &[bool],
    step: f64,
    cfg: &KmConfig,
) -> Result<KmProfile> {
    if cfg.n_bins < 5 {
        return Err(Error::Argument(format!(
            "need at least 5 bins, got {}",
            cfg.n_bins
        )));
    }
    debug_assert_eq!(values.len(), mask.len());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (v, &m) in values.iter().zip(mask) {
        if !m {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !(hi > lo) {
        return Err(Error::Estimation(
            "retained values have zero range; cannot bin".into(),
        ));
    }
    let n_bins = cfg.n_bins;
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins)
        .map(|i| {
            if i == n_bins {
                hi
            } else {
                lo + width * i as f64
            }
        })
        .collect();
    let bin_centers: Vec<f64> = edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();

    let mut counts = vec![0usize; n_bins];
    let mut s1 = vec![0.0; n_bins];
    let mut s2 = vec![0.0; n_bins];
    let mut s4 = vec![0.0; n_bins];
    for i in 0..values.len().saturating_sub(1) {
        if mask[i] {
            continue;
        }
        let x = values[i];
        let b = (((x - lo) / width) as usize).min(n_bins - 1);
        let dx = values[i + 1] - x;
        let dx2 = dx * dx;
        counts[b] += 1;
        s1[b] += dx;
        s2[b] += dx2;
        s4[b] += dx2 * dx2;
    }

    let valid: Vec<bool> = counts
        .iter()
        .map(|&c| c > 0 && c >= cfg.min_count)
        .collect();
    if !valid.iter().any(|&v| v) {
        return Err(Error::Estimation(format!(
            "no bin reaches {} samples ({} transitions over {} bins)",
            cfg.min_count,
            counts.iter().sum::<usize>(),
            n_bins
        )));
    }
    let coef = |sums: &[f64], factorial: f64| -> Vec<f64> {
        sums.iter()
            .zip(&counts)
            .map(|(s, &c)| {
                if c == 0 {
                    f64::NAN
                } else {
                    s / (c as f64 * step * factorial)
                }
            })
            .collect()
    };
    Ok(KmProfile {
        d1: cfg.orders.d1.then(|| coef(&s1, 1.0)),
        d2: cfg.orders.d2.then(|| coef(&s2, 2.0)),
        d4: cfg.orders.d4.then(|| coef(&s4, 24.0)),
        edges,
        bin_centers,
        counts,
        valid,
        step,
        min_count: cfg.min_count,
        convention: Convention::Factorial,
    })
}

/// `D1(r) ~ alpha r + gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    pub alpha: f64,
    pub gamma: f64,
    pub r_squared: f64,
}

/// `D2(r) ~ beta r^2 + delta r` (+ `epsilon` when the constant term is enabled).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionFit {
    pub beta: f64,
    pub delta: f64,
    pub epsilon: Option<f64>,
    pub r_squared: f64,
}

fn fit_inputs(
    profile: &KmProfile,
    coef: Option<&Vec<f64>>,
    name: &str,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let coef = coef.ok_or_else(|| Error::Argument(format!("{name} was not estimated")))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for b in profile.valid_bins() {
        if coef[b].is_finite() {
            xs.push(profile.bin_centers[b]);
            ys.push(coef[b]);
            ws.push(profile.counts[b] as f64);
        }
    }
    if xs.len() < 3 {
        return Err(Error::Fit(format!(
            "{name} fit needs at least 3 valid bins, have {}",
            xs.len()
        )));
    }
    Ok((xs, ys, ws))
}

/// Count-weighted least-squares line through the valid `d1` bins.
pub fn fit_drift(profile: &KmProfile) -> Result<DriftFit> {
    let (xs, ys, ws) = fit_inputs(profile, profile.d1.as_ref(), "D1")?;
    let design: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, 1.0]).collect();
    let fit = weighted_least_squares(&design, &ys, &ws)?;
    Ok(DriftFit {
        alpha: fit.coefficients[0],
        gamma: fit.coefficients[1],
        r_squared: fit.r_squared,
    })
}

/// Count-weighted least squares of `d2` on `(r^2, r)` without intercept, or on
/// `(r^2, r, 1)` with `constant_term`. R² is mean-centred and therefore low (even
/// negative) when a flat `d2` is forced through the origin.
pub fn fit_diffusion(profile: &KmProfile, constant_term: bool) -> Result<DiffusionFit> {
    let (xs, ys, ws) = fit_inputs(profile, profile.d2.as_ref(), "D2")?;
    let design: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| {
            if constant_term {
                vec![x * x, x, 1.0]
            } else {
                vec![x * x, x]
            }
        })
        .collect();
    let fit = weighted_least_squares(&design, &ys, &ws)?;
    Ok(DiffusionFit {
        beta: fit.coefficients[0],
        delta: fit.coefficients[1],
        epsilon: constant_term.then(|| fit.coefficients[2]),
        r_squared: fit.r_squared,
    })
}

/// Per-bin `d4 / d2^2`. For a Gaussian increment process this is `dt / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PawulaRatios {
    /// `None` for invalid bins and for bins with `d2 == 0`.
    pub ratios: Vec<Option<f64>>,
    pub step: f64,
}

impl PawulaRatios {
    pub fn max(&self) -> Option<f64> {
        self.ratios.iter().flatten().copied().reduce(f64::max)
    }

    pub fn undefined_bins(&self) -> usize {
        self.ratios.iter().filter(|r| r.is_none()).count()
    }
}

pub fn pawula_ratio(profile: &KmProfile) -> Result<PawulaRatios> {
    let (d2, d4) = match (&profile.d2, &profile.d4) {
        (Some(d2), Some(d4)) => (d2, d4),
        _ => return Err(Error::Argument("Pawula ratio needs orders 2 and 4".into())),
    };
    let ratios = (0..profile.n_bins())
        .map(|b| (profile.valid[b] && d2[b] > 0.0).then(|| d4[b] / (d2[b] * d2[b])))
        .collect();
    Ok(PawulaRatios {
        ratios,
        step: profile.step,
    })
}
