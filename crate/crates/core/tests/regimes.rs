//! Rolling estimation and segmentation on simulated regime switches.
//!
//! Additive-noise windows rarely clear the diffusion R^2 gate (D2 is flat, so a
//! zero-intercept quadratic explains little), so the regimes here use D2 = 0.01 + x^2.

use kmscope::changepoint::{binseg, track_breakpoints, SegmentationConfig};
use kmscope::ingest::ReturnSeries;
use kmscope::langevin::{synthetic_regime_series, LangevinModel, RegimePath};
use kmscope::rolling::{rolling_estimate, sensitivity, RollingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn regime(theta: f64, len: usize) -> (LangevinModel, usize) {
    let m = LangevinModel {
        drift: [0.0, -theta, 0.0],
        diffusion: [0.01, 0.0, 1.0],
        dt: 0.5,
        x0: 0.0,
        domain: None,
    };
    (m, len)
}

fn series(path: &RegimePath) -> ReturnSeries {
    ReturnSeries::synthetic(path.values.clone(), 0.5).unwrap()
}

fn defined(v: &[Option<f64>]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

#[test]
fn stationary_track_is_flat() {
    let path = synthetic_regime_series(&[regime(1.0, 60_000)], 1).unwrap();
    let cfg = RollingConfig {
        window_length: 5000,
        step: 500,
        ..RollingConfig::default()
    };
    let track = rolling_estimate(&series(&path), &cfg).unwrap();
    let alpha = defined(&track.alpha);
    assert!(
        alpha.len() * 10 >= track.len() * 9,
        "{} of {} defined",
        alpha.len(),
        track.len()
    );
    let n = alpha.len() as f64;
    let mean = alpha.iter().sum::<f64>() / n;
    let sd = (alpha.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean + 1.0).abs() < 0.1, "mean alpha {mean}");
    assert!(sd < 0.1 * mean.abs(), "alpha spread {sd} around {mean}");
    // Single windows carry their own sampling error; the spread above is the 10% check.
    let worst = alpha.iter().map(|a| (a + 1.0).abs()).fold(0.0, f64::max);
    assert!(worst < 0.2, "worst window off by {worst}");
}

#[test]
fn drift_change_shows_up_within_one_window() {
    let window = 2000;
    let path = synthetic_regime_series(&[regime(1.0, 15_000), regime(3.0, 15_000)], 2).unwrap();
    let change = path.change_indices[0];
    let cfg = RollingConfig {
        window_length: window,
        step: 50,
        ..RollingConfig::default()
    };
    let track = rolling_estimate(&series(&path), &cfg).unwrap();
    let mean_in = |lo: usize, hi: usize| {
        let v: Vec<f64> = (0..track.len())
            .filter(|&i| (lo..hi).contains(&track.end_index[i]))
            .filter_map(|i| track.alpha[i])
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    // Windows wholly before the change and wholly after it.
    let before = mean_in(change - 3 * window, change);
    let after = mean_in(change + window, change + 3 * window);
    assert!((before + 1.0).abs() < 0.2, "before {before}");
    assert!((after + 3.0).abs() < 0.6, "after {after}");
}

#[test]
fn nearby_window_lengths_agree() {
    let path = synthetic_regime_series(&[regime(1.0, 40_000)], 3).unwrap();
    let cfg = RollingConfig {
        window_length: 4000,
        step: 500,
        ..RollingConfig::default()
    };
    let report = sensitivity(&series(&path), &cfg, &[2800, 3400, 4600, 5200]).unwrap();
    let level = defined(&report.baseline.alpha);
    let level = level.iter().sum::<f64>() / level.len() as f64;
    let spread = report.mean_deviation_std.alpha.unwrap();
    assert!(
        spread < 0.15 * level.abs(),
        "deviation spread {spread} vs level {level}"
    );
}

#[test]
fn binseg_recovers_large_jumps() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut recovered = 0;
    for _ in 0..100 {
        let truth = [75, 150, 225];
        let mut level = 0.0;
        let mut xs = Vec::with_capacity(300);
        for i in 0..300 {
            if truth.contains(&i) {
                let jump: f64 = rng.random_range(5.0..8.0);
                level += if rng.random::<bool>() { jump } else { -jump };
            }
            xs.push(level + rng.sample::<f64, _>(StandardNormal));
        }
        let seg = binseg(&xs, &SegmentationConfig::with_breakpoints(3)).unwrap();
        if seg.breaks.len() == 3
            && seg
                .breaks
                .iter()
                .zip(&truth)
                .all(|(&b, &t)| b.abs_diff(t) <= 2)
        {
            recovered += 1;
        }
    }
    assert!(recovered >= 95, "recovered {recovered}/100");
}

#[test]
fn break_density_peaks_within_a_window_after_the_change() {
    // Track points are stamped at the window's right edge, so a break in the track
    // lands up to one window after the change in the data.
    let window = 2000;
    let path = synthetic_regime_series(&[regime(1.0, 15_000), regime(3.0, 15_000)], 4).unwrap();
    let s = series(&path);
    let cfg = RollingConfig {
        window_length: window,
        step: 25,
        ..RollingConfig::default()
    };
    let track = rolling_estimate(&s, &cfg).unwrap();
    let report = track_breakpoints(&track, &SegmentationConfig::with_breakpoints(1), 1).unwrap();
    let change = path.change_indices[0];
    let (lo, hi) = (s.dates[change], s.dates[change + window]);
    let peak = report.ranked_bins()[0];
    assert!(
        peak.end > lo && peak.start <= hi,
        "peak {peak:?} outside {lo}..{hi}"
    );
    for b in &report.alpha_breaks {
        let idx = track.end_index[b.index];
        assert!(
            (change..=change + window).contains(&idx),
            "alpha break at {idx}, change at {change}"
        );
    }
}
