//! Stationarity and Markovianity checks that precede coefficient estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ReturnSeries;

pub const DEFAULT_MARKOV_BINS: usize = 100;
/// Source bins visited fewer times than this are left out of the L1 sum.
pub const DEFAULT_MIN_OCCUPANCY: usize = 5;

/// Mean within-window sample variance `W(S)` for each window size `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityCurve {
    pub window_sizes: Vec<usize>,
    pub w_values: Vec<f64>,
}

/// Averages the sample variance (`n - 1` denominator) of every length-`S` window of
/// the retained returns. Clipped observations are dropped before windowing.
pub fn sliding_variance(
    series: &ReturnSeries,
    window_sizes: &[usize],
) -> Result<StationarityCurve> {
    let xs = series.retained_values();
    let mut sizes = window_sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    if let Some(&s) = sizes.iter().find(|&&s| s < 2) {
        return Err(Error::Argument(format!("window size {s} is below 2")));
    }
    if let Some(&s) = sizes.iter().find(|&&s| s > xs.len()) {
        return Err(Error::Argument(format!(
            "window size {s} exceeds the {} retained observations",
            xs.len()
        )));
    }
    // Prefix sums of centred values keep the running-sum variance well conditioned.
    let centre = crate::stats::mean(&xs);
    let mut p1 = Vec::with_capacity(xs.len() + 1);
    let mut p2 = Vec::with_capacity(xs.len() + 1);
    p1.push(0.0);
    p2.push(0.0);
    for x in &xs {
        let c = x - centre;
        p1.push(p1.last().unwrap() + c);
        p2.push(p2.last().unwrap() + c * c);
    }
    let w_values = sizes
        .iter()
        .map(|&s| {
            let n = s as f64;
            let starts = xs.len() - s + 1;
            let total: f64 = (0..starts)
                .map(|i| {
                    let sum = p1[i + s] - p1[i];
                    let sq = p2[i + s] - p2[i];
                    ((sq - sum * sum / n) / (n - 1.0)).max(0.0)
                })
                .sum();
            total / starts as f64
        })
        .collect();
    Ok(StationarityCurve {
        window_sizes: sizes,
        w_values,
    })
}

/// Row-stochastic transition matrix between equal-width return bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub n_bins: usize,
    pub edges: Vec<f64>,
    /// Row-major; `probs[src * n_bins + dst]` is `P(dst | src)`.
    pub probs: Vec<f64>,
    pub occupancy: Vec<usize>,
}

impl TransitionMatrix {
    pub fn prob(&self, src: usize, dst: usize) -> f64 {
        self.probs[src * self.n_bins + dst]
    }

    pub fn row(&self, src: usize) -> &[f64] {
        &self.probs[src * self.n_bins..(src + 1) * self.n_bins]
    }

    /// A row is undefined (all zero) when its source bin was never visited.
    pub fn is_defined(&self, src: usize) -> bool {
        self.occupancy[src] > 0
    }
}

struct Binning {
    edges: Vec<f64>,
    labels: Vec<Option<usize>>,
}

fn bin_retained(series: &ReturnSeries, n_bins: usize) -> Result<Binning> {
    if n_bins < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 bins, got {n_bins}"
        )));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, v) in series.values.iter().enumerate() {
        if series.is_retained(i) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !lo.is_finite() {
        return Err(Error::Estimation("no retained observations".into()));
    }
    // A degenerate range puts everything in bin 0.
    let width = if hi > lo {
        (hi - lo) / n_bins as f64
    } else {
        1.0
    };
    let mut edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64).collect();
    if hi > lo {
        edges[n_bins] = hi;
    }
    let labels = series
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            series
                .is_retained(i)
                .then(|| (((v - lo) / width) as usize).min(n_bins - 1))
        })
        .collect();
    Ok(Binning { edges, labels })
}

fn normalise_rows(counts: &[usize], n_bins: usize) -> (Vec<f64>, Vec<usize>) {
    let mut probs = vec![0.0; n_bins * n_bins];
    let mut occupancy = vec![0usize; n_bins];
    for src in 0..n_bins {
        let row = &counts[src * n_bins..(src + 1) * n_bins];
        let total: usize = row.iter().sum();
        occupancy[src] = total;
        if total > 0 {
            for (p, &c) in probs[src * n_bins..(src + 1) * n_bins].iter_mut().zip(row) {
                *p = c as f64 / total as f64;
            }
        }
    }
    (probs, occupancy)
}

/// Conditional probabilities of the bin at `t + lag` given the bin at `t`, from all
/// pairs whose two endpoints are retained.
pub fn transition_matrix(
    series: &ReturnSeries,
    lag: usize,
    n_bins: usize,
) -> Result<TransitionMatrix> {
    if lag == 0 {
        return Err(Error::Argument("lag must be at least 1".into()));
    }
    let binning = bin_retained(series, n_bins)?;
    let labels = &binning.labels;
    let mut counts = vec![0usize; n_bins * n_bins];
    let mut pairs = 0usize;
    for t in 0..labels.len().saturating_sub(lag) {
        if let (Some(a), Some(b)) = (labels[t], labels[t + lag]) {
            counts[a * n_bins + b] += 1;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::Estimation(format!("no retained pairs at lag {lag}")));
    }
    let (probs, occupancy) = normalise_rows(&counts, n_bins);
    Ok(TransitionMatrix {
        n_bins,
        edges: binning.edges,
        probs,
        occupancy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovConfig {
    pub n_bins: usize,
    pub min_occupancy: usize,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        Self {
            n_bins: DEFAULT_MARKOV_BINS,
            min_occupancy: DEFAULT_MIN_OCCUPANCY,
        }
    }
}

/// Chapman–Kolmogorov deviation
///
/// ```text
/// Q_M(T) = sum_{i,j} | P3(j | i) - sum_k P1(k | i) P2(j | k) |
/// ```
///
/// where `P1`, `P2` and `P3` are the `t -> t+T`, `t+T -> t+2T` and `t -> t+2T`
/// transition matrices built from the same triplets. Source bins `i` with fewer
/// than `min_occupancy` triplets are skipped.
pub fn ck_deviation(series: &ReturnSeries, lag: usize, cfg: &MarkovConfig) -> Result<f64> {
    if lag == 0 {
        return Err(Error::Argument("lag must be at least 1".into()));
    }
    if 2 * lag >= series.len() {
        return Err(Error::Estimation(format!(
            "series of length {} too short for lag {lag}",
            series.len()
        )));
    }
    let binning = bin_retained(series, cfg.n_bins)?;
    ck_from_labels(&binning.labels, cfg.n_bins, lag, cfg.min_occupancy)
}

pub(crate) fn ck_from_labels(
    labels: &[Option<usize>],
    n: usize,
    lag: usize,
    min_occupancy: usize,
) -> Result<f64> {
    let mut c1 = vec![0usize; n * n];
    let mut c2 = vec![0usize; n * n];
    let mut c3 = vec![0usize; n * n];
    let mut triplets = 0usize;
    for t in 0..labels.len().saturating_sub(2 * lag) {
        if let (Some(a), Some(b), Some(c)) = (labels[t], labels[t + lag], labels[t + 2 * lag]) {
            c1[a * n + b] += 1;
            c2[b * n + c] += 1;
            c3[a * n + c] += 1;
            triplets += 1;
        }
    }
    if triplets == 0 {
        return Err(Error::Estimation(format!(
            "no retained triplets at lag {lag}"
        )));
    }
    let (p1, occ) = normalise_rows(&c1, n);
    let (p2, _) = normalise_rows(&c2, n);
    let (p3, _) = normalise_rows(&c3, n);

    let mut q = 0.0;
    let mut composed = vec![0.0; n];
    for i in 0..n {
        if occ[i] == 0 || occ[i] < min_occupancy {
            continue;
        }
        composed.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..n {
            let pik = p1[i * n + k];
            if pik == 0.0 {
                continue;
            }
            for (acc, &pkj) in composed.iter_mut().zip(&p2[k * n..(k + 1) * n]) {
                *acc += pik * pkj;
            }
        }
        q += composed
            .iter()
            .zip(&p3[i * n..(i + 1) * n])
            .map(|(c, d)| (d - c).abs())
            .sum::<f64>();
    }
    Ok(q)
}

/// Exponential fit `Q_M(T) = A exp(-T / T_M)` to a Chapman–Kolmogorov curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovTestResult {
    pub lags: Vec<usize>,
    pub q_values: Vec<f64>,
    /// `None` when the fit failed.
    pub amplitude: Option<f64>,
    /// Markov length in sampling steps; `None` when the curve does not decay.
    pub markov_length: Option<f64>,
    /// Sum of squared residuals of the log-linear fit.
    pub fit_residual: f64,
}

impl MarkovTestResult {
    pub fn succeeded(&self) -> bool {
        self.markov_length.is_some()
    }
}

/// Least-squares line through `(T, ln Q_M)`. Non-positive values are left out with a
/// warning. A non-negative slope yields a failed fit rather than an error.
pub fn fit_markov_length(lags: &[usize], q_values: &[f64]) -> Result<MarkovTestResult> {
    if lags.len() != q_values.len() {
        return Err(Error::Argument(format!(
            "{} lags for {} values",
            lags.len(),
            q_values.len()
        )));
    }
    if lags.len() < 3 {
        return Err(Error::Argument(format!(
            "need at least 3 lags for the exponential fit, got {}",
            lags.len()
        )));
    }
    let points: Vec<(f64, f64)> = lags
        .iter()
        .zip(q_values)
        .filter(|(_, &q)| q > 0.0 && q.is_finite())
        .map(|(&t, &q)| (t as f64, q.ln()))
        .collect();
    if points.len() < lags.len() {
        log::warn!(
            "{} non-positive Q_M values left out of the exponential fit",
            lags.len() - points.len()
        );
    }
    let failed = |residual: f64| MarkovTestResult {
        lags: lags.to_vec(),
        q_values: q_values.to_vec(),
        amplitude: None,
        markov_length: None,
        fit_residual: residual,
    };
    if points.len() < 2 {
        return Ok(failed(f64::NAN));
    }
    let m = points.len() as f64;
    let tbar = points.iter().map(|p| p.0).sum::<f64>() / m;
    let ybar = points.iter().map(|p| p.1).sum::<f64>() / m;
    let stt: f64 = points.iter().map(|p| (p.0 - tbar).powi(2)).sum();
    let sty: f64 = points.iter().map(|p| (p.0 - tbar) * (p.1 - ybar)).sum();
    if stt == 0.0 {
        return Ok(failed(f64::NAN));
    }
    let slope = sty / stt;
    let intercept = ybar - slope * tbar;
    let residual: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let y_scale = points.iter().map(|p| p.1.abs()).fold(1.0, f64::max);
    if slope >= -1e-12 * y_scale {
        log::warn!("Q_M does not decay with lag (slope {slope:e}); Markov length undefined");
        return Ok(failed(residual));
    }
    Ok(MarkovTestResult {
        lags: lags.to_vec(),
        q_values: q_values.to_vec(),
        amplitude: Some(intercept.exp()),
        markov_length: Some(-1.0 / slope),
        fit_residual: residual,
    })
}

/// Evaluates `Q_M` on every lag (in parallel) and fits the Markov length.
pub fn markov_test(
    series: &ReturnSeries,
    lags: &[usize],
    cfg: &MarkovConfig,
) -> Result<MarkovTestResult> {
    let q_values = lags
        .par_iter()
        .map(|&lag| ck_deviation(series, lag, cfg))
        .collect::<Result<Vec<f64>>>()?;
    fit_markov_length(lags, &q_values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: Vec<f64>) -> ReturnSeries {
        ReturnSeries::synthetic(values, 1.0).unwrap()
    }

    #[test]
    fn constant_series_has_zero_variance() {
        let c = sliding_variance(&series(vec![5.0; 200]), &[2, 10, 50]).unwrap();
        assert!(c.w_values.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn linear_trend_variance_is_closed_form() {
        // Sample variance of S consecutive integers: S (S + 1) / 12.
        let xs: Vec<f64> = (0..1000).map(f64::from).collect();
        let sizes = [2, 5, 10, 50, 200];
        let c = sliding_variance(&series(xs), &sizes).unwrap();
        for (s, w) in c.window_sizes.iter().zip(&c.w_values) {
            let s = *s as f64;
            let expected = s * (s + 1.0) / 12.0;
            assert!(
                (w - expected).abs() < 1e-9 * expected,
                "S={s}: {w} vs {expected}"
            );
        }
    }

    #[test]
    fn sliding_variance_argument_errors() {
        let s = series(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            sliding_variance(&s, &[1]),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            sliding_variance(&s, &[4]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn sliding_variance_skips_clipped_points() {
        let mut s = series(vec![0.0, 100.0, 0.0, 0.0]);
        s.clip_mask[1] = true;
        let c = sliding_variance(&s, &[3]).unwrap();
        assert_eq!(c.w_values, vec![0.0]);
    }

    #[test]
    fn alternating_series_is_a_permutation() {
        let xs: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { -1.0 } else { 1.0 })
            .collect();
        let m = transition_matrix(&series(xs), 1, 2).unwrap();
        assert_eq!(m.prob(0, 0), 0.0);
        assert_eq!(m.prob(0, 1), 1.0);
        assert_eq!(m.prob(1, 0), 1.0);
        assert_eq!(m.prob(1, 1), 0.0);
    }

    #[test]
    fn unvisited_source_row_is_undefined() {
        let xs = vec![0.0, 0.1, 0.0, 0.1, 0.0, 1.0];
        let m = transition_matrix(&series(xs), 1, 4).unwrap();
        assert!(!m.is_defined(2));
        assert!(m.row(2).iter().all(|&p| p == 0.0));
        // The last value is only ever a destination.
        assert!(!m.is_defined(3));
        for src in (0..4).filter(|&s| m.is_defined(s)) {
            assert!((m.row(src).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn transition_matrix_errors() {
        let s = series(vec![0.0, 1.0]);
        assert!(transition_matrix(&s, 0, 2).is_err());
        assert!(transition_matrix(&s, 1, 1).is_err());
        assert!(matches!(
            transition_matrix(&s, 2, 2),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn period_three_cycle_satisfies_ck_exactly() {
        let xs: Vec<f64> = (0..300).map(|i| (i % 3) as f64).collect();
        let cfg = MarkovConfig {
            n_bins: 3,
            min_occupancy: 5,
        };
        assert_eq!(ck_deviation(&series(xs), 1, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn ck_needs_enough_points() {
        let s = series(vec![0.0, 1.0, 2.0, 3.0]);
        assert!(matches!(
            ck_deviation(&s, 2, &MarkovConfig::default()),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn exact_exponential_recovered() {
        let q: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|t| (-t).exp()).collect();
        let r = fit_markov_length(&[1, 2, 3], &q).unwrap();
        assert!((r.amplitude.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.markov_length.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.fit_residual < 1e-25);
    }

    #[test]
    fn flat_curve_is_a_failed_fit() {
        let r = fit_markov_length(&[1, 2, 3, 4], &[0.1; 4]).unwrap();
        assert!(!r.succeeded());
        assert_eq!(r.amplitude, None);
    }

    #[test]
    fn increasing_curve_is_a_failed_fit() {
        let r = fit_markov_length(&[1, 2, 3], &[0.1, 0.2, 0.4]).unwrap();
        assert!(!r.succeeded());
    }

    #[test]
    fn zero_values_are_excluded() {
        let r = fit_markov_length(
            &[1, 2, 3, 4],
            &[(-0.5f64).exp(), (-1.0f64).exp(), 0.0, (-2.0f64).exp()],
        )
        .unwrap();
        assert!((r.markov_length.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fit_needs_three_lags() {
        assert!(fit_markov_length(&[1, 2], &[0.5, 0.25]).is_err());
    }

    proptest! {
        #[test]
        fn noiseless_exponentials_are_recovered(a in 1e-3f64..1e3, tm in 0.05f64..50.0, n in 3usize..12) {
            let lags: Vec<usize> = (1..=n).collect();
            let q: Vec<f64> = lags.iter().map(|&t| a * (-(t as f64) / tm).exp()).collect();
            let r = fit_markov_length(&lags, &q).unwrap();
            prop_assert!((r.amplitude.unwrap() - a).abs() <= 1e-9 * a);
            prop_assert!((r.markov_length.unwrap() - tm).abs() <= 1e-9 * tm);
        }

        #[test]
        fn q_ignores_bin_relabelling(seed in any::<u64>(), lag in 1usize..4) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 6;
            let labels: Vec<Option<usize>> = (0..2000)
                .map(|_| if rng.random::<f64>() < 0.05 { None } else { Some(rng.random_range(0..n)) })
                .collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let relabelled: Vec<Option<usize>> = labels.iter().map(|l| l.map(|b| perm[b])).collect();
            let a = ck_from_labels(&labels, n, lag, 5).unwrap();
            let b = ck_from_labels(&relabelled, n, lag, 5).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn transition_rows_sum_to_one(seed in any::<u64>(), n_bins in 2usize..30, lag in 1usize..5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
            let m = transition_matrix(&series(xs), lag, n_bins).unwrap();
            for src in 0..n_bins {
                let s: f64 = m.row(src).iter().sum();
                if m.is_defined(src) {
                    prop_assert!((s - 1.0).abs() < 1e-9);
                } else {
                    prop_assert_eq!(s, 0.0);
                }
            }
        }
    }
}
