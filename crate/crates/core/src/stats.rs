//! Small numeric helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator. Zero for fewer than two points.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Median of the finite values, averaging the two middle elements for even counts.
pub fn median(xs: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Result of a weighted linear least-squares fit.
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
}

/// Weighted least squares of `y` on the columns of `design` (row-major, one row per
/// observation). R² is the weighted, mean-centred coefficient of determination; when
/// the target has no spread it is 1 if the residuals vanish too, else 0.
pub fn weighted_least_squares(design: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<WlsFit> {
    let n = y.len();
    let p = design.first().map_or(0, Vec::len);
    if n == 0 || p == 0 || design.len() != n || w.len() != n {
        return Err(Error::Fit("empty or mismatched regression inputs".into()));
    }
    if n < p {
        return Err(Error::Fit(format!("{n} observations for {p} parameters")));
    }
    // Column scaling keeps r and r^2 columns comparable before the SVD.
    let mut scale = vec![0.0_f64; p];
    for row in design {
        for (s, v) in scale.iter_mut().zip(row) {
            *s = s.max(v.abs());
        }
    }
    for s in &mut scale {
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let a = DMatrix::from_fn(n, p, |i, j| w[i].sqrt() * design[i][j] / scale[j]);
    let b = DVector::from_fn(n, |i, _| w[i].sqrt() * y[i]);
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    let sol = svd
        .solve(&b, max_sv * 1e-12)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let coefficients: Vec<f64> = (0..p).map(|j| sol[j] / scale[j]).collect();

    let wsum: f64 = w.iter().sum();
    let ybar = w.iter().zip(y).map(|(wi, yi)| wi * yi).sum::<f64>() / wsum;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut ss_raw = 0.0;
    for i in 0..n {
        let pred: f64 = design[i]
            .iter()
            .zip(&coefficients)
            .map(|(x, c)| x * c)
            .sum();
        ss_res += w[i] * (y[i] - pred).powi(2);
        ss_tot += w[i] * (y[i] - ybar).powi(2);
        ss_raw += w[i] * y[i] * y[i];
    }
    let tiny = 1e-24 * ss_raw;
    let r_squared = if ss_tot <= tiny {
        if ss_res <= tiny {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(WlsFit {
        coefficients,
        r_squared,
    })
}

/// Linear interpolation of `ys` sampled at increasing `xs`, evaluated at `x`.
pub fn lerp_at(x0: f64, y0: f64, x1: f64, y1: f64, x: f64) -> f64 {
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}
