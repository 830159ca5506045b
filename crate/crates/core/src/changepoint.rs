//! Change-point detection on coefficient tracks.
//!
//! Segments are scored with the squared-error (piecewise-constant-mean) cost
//! `sum_i (x_i - mean)^2`. [`binseg`] is the greedy binary segmentation used on the
//! tracks; [`dp_optimal`] is the exact dynamic program used to check it.
//!
//! A breakpoint `t` splits a signal into `[.., t)` and `[t, ..)`.

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rolling::CoefficientTrack;
use crate::stats;

pub const DEFAULT_N_BREAKPOINTS: usize = 30;
pub const DEFAULT_BIN_MONTHS: u32 = 6;

/// A time-aligned sequence with possibly undefined entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub values: Vec<Option<f64>>,
    pub times: Vec<NaiveDate>,
}

impl Signal {
    pub fn new(values: Vec<Option<f64>>, times: Vec<NaiveDate>) -> Result<Self> {
        if values.len() != times.len() {
            return Err(Error::Argument(format!(
                "{} values for {} times",
                values.len(),
                times.len()
            )));
        }
        Ok(Self { values, times })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The values as plain floats, `None` only if some entry is still undefined.
    pub fn dense(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }
}

/// Replaces undefined (or non-finite) entries by the median of the defined ones.
pub fn impute_undefined(signal: &Signal) -> Result<Signal> {
    let defined: Vec<f64> = signal
        .values
        .iter()
        .flatten()
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    let fill = stats::median(&defined)
        .ok_or_else(|| Error::Argument("signal has no defined values to impute from".into()))?;
    let values = signal
        .values
        .iter()
        .map(|v| match v {
            Some(x) if x.is_finite() => Some(*x),
            _ => Some(fill),
        })
        .collect();
    Ok(Signal {
        values,
        times: signal.times.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub n_breakpoints: usize,
    pub min_segment: usize,
    /// Only indices that are multiples of `jump` are considered as breakpoints.
    pub jump: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            n_breakpoints: DEFAULT_N_BREAKPOINTS,
            min_segment: 2,
            jump: 1,
        }
    }
}

impl SegmentationConfig {
    pub fn with_breakpoints(n_breakpoints: usize) -> Self {
        Self {
            n_breakpoints,
            ..Self::default()
        }
    }

    fn validate(&self, len: usize) -> Result<()> {
        if self.n_breakpoints == 0 {
            return Err(Error::Argument("need at least one breakpoint".into()));
        }
        if self.min_segment < 2 {
            return Err(Error::Argument("min_segment must be at least 2".into()));
        }
        if self.jump == 0 {
            return Err(Error::Argument("jump must be at least 1".into()));
        }
        if (self.n_breakpoints + 1) * self.min_segment > len {
            return Err(Error::Argument(format!(
                "{} breakpoints with min_segment {} do not fit a signal of length {len}",
                self.n_breakpoints, self.min_segment
            )));
        }
        Ok(())
    }
}

/// Prefix sums for O(1) segment costs.
struct SegmentCost {
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl SegmentCost {
    fn new(xs: &[f64]) -> Self {
        let centre = stats::mean(xs);
        let mut s1 = Vec::with_capacity(xs.len() + 1);
        let mut s2 = Vec::with_capacity(xs.len() + 1);
        s1.push(0.0);
        s2.push(0.0);
        for x in xs {
            let c = x - centre;
            s1.push(s1.last().unwrap() + c);
            s2.push(s2.last().unwrap() + c * c);
        }
        Self { s1, s2 }
    }

    fn cost(&self, a: usize, b: usize) -> f64 {
        let n = (b - a) as f64;
        let sum = self.s1[b] - self.s1[a];
        (self.s2[b] - self.s2[a] - sum * sum / n).max(0.0)
    }

    /// Cost reduction from splitting `[a, b)` at `t`: `n1 n2 / n (mean1 - mean2)^2`.
    fn gain(&self, a: usize, t: usize, b: usize) -> f64 {
        let n1 = (t - a) as f64;
        let n2 = (b - t) as f64;
        let m1 = (self.s1[t] - self.s1[a]) / n1;
        let m2 = (self.s1[b] - self.s1[t]) / n2;
        n1 * n2 / (n1 + n2) * (m1 - m2) * (m1 - m2)
    }
}

/// Breakpoints with the gains that produced them and the final total cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Sorted breakpoint indices.
    pub breaks: Vec<usize>,
    /// Cost reduction of each split, in the order the splits were made (binseg only).
    pub gains: Vec<f64>,
    pub cost: f64,
}

/// Total squared-error cost of the segmentation induced by `breaks`.
pub fn segmentation_cost(xs: &[f64], breaks: &[usize]) -> f64 {
    let sc = SegmentCost::new(xs);
    let mut a = 0;
    let mut total = 0.0;
    for &b in breaks.iter().chain(std::iter::once(&xs.len())) {
        total += sc.cost(a, b);
        a = b;
    }
    total
}

fn best_split(
    sc: &SegmentCost,
    a: usize,
    b: usize,
    cfg: &SegmentationConfig,
) -> Option<(usize, f64)> {
    let first = a + cfg.min_segment;
    let last = b.checked_sub(cfg.min_segment)?;
    if first > last {
        return None;
    }
    let start = first.div_ceil(cfg.jump) * cfg.jump;
    let mut best: Option<(usize, f64)> = None;
    for t in (start..=last).step_by(cfg.jump) {
        let g = sc.gain(a, t, b);
        if best.is_none_or(|(_, bg)| g > bg) {
            best = Some((t, g));
        }
    }
    best
}

/// Greedy binary segmentation: at every step the segment whose best internal split
/// removes the most cost is split, until `n_breakpoints` splits exist or no segment
/// can be split further. Ties go to the smallest index.
pub fn binseg(xs: &[f64], cfg: &SegmentationConfig) -> Result<Segmentation> {
    cfg.validate(xs.len())?;
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(Error::Argument(format!(
            "non-finite value at index {i}; impute first"
        )));
    }
    let sc = SegmentCost::new(xs);
    // (start, end, best split) per current segment, kept in index order.
    let mut segments: Vec<(usize, usize, Option<(usize, f64)>)> =
        vec![(0, xs.len(), best_split(&sc, 0, xs.len(), cfg))];
    let mut breaks = Vec::with_capacity(cfg.n_breakpoints);
    let mut gains = Vec::with_capacity(cfg.n_breakpoints);
    while breaks.len() < cfg.n_breakpoints {
        let mut chosen: Option<(usize, usize, f64)> = None;
        for (i, (_, _, split)) in segments.iter().enumerate() {
            if let Some((t, g)) = *split {
                if chosen.is_none_or(|(_, ct, cg)| g > cg || (g == cg && t < ct)) {
                    chosen = Some((i, t, g));
                }
            }
        }
        let Some((i, t, g)) = chosen else {
            log::warn!(
                "binary segmentation stopped at {} of {} breakpoints: no splittable segment left",
                breaks.len(),
                cfg.n_breakpoints
            );
            break;
        };
        let (a, b, _) = segments[i];
        segments[i] = (a, t, best_split(&sc, a, t, cfg));
        segments.insert(i + 1, (t, b, best_split(&sc, t, b, cfg)));
        breaks.push(t);
        gains.push(g);
    }
    breaks.sort_unstable();
    let cost = segments.iter().map(|&(a, b, _)| sc.cost(a, b)).sum();
    Ok(Segmentation {
        breaks,
        gains,
        cost,
    })
}

/// Globally optimal `k`-breakpoint segmentation by dynamic programming, O(n^2 k).
pub fn dp_optimal(xs: &[f64], k: usize, min_segment: usize) -> Result<Segmentation> {
    let cfg = SegmentationConfig {
        n_breakpoints: k,
        min_segment,
        jump: 1,
    };
    cfg.validate(xs.len())?;
    let n = xs.len();
    let sc = SegmentCost::new(xs);
    // best[j][t]: cost of splitting xs[..t] into j + 1 segments.
    let mut best = vec![vec![f64::INFINITY; n + 1]; k + 1];
    let mut arg = vec![vec![0usize; n + 1]; k + 1];
    for t in min_segment..=n {
        best[0][t] = sc.cost(0, t);
    }
    for j in 1..=k {
        for t in (j + 1) * min_segment..=n {
            let mut b = f64::INFINITY;
            let mut bs = 0;
            for s in j * min_segment..=t - min_segment {
                let c = best[j - 1][s] + sc.cost(s, t);
                if c < b {
                    b = c;
                    bs = s;
                }
            }
            best[j][t] = b;
            arg[j][t] = bs;
        }
    }
    let mut breaks = Vec::with_capacity(k);
    let mut t = n;
    for j in (1..=k).rev() {
        t = arg[j][t];
        breaks.push(t);
    }
    breaks.reverse();
    Ok(Segmentation {
        breaks,
        gains: Vec::new(),
        cost: best[k][n],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub index: usize,
    pub date: NaiveDate,
}

/// Number of breakpoints dated inside `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityBin {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakpointReport {
    pub alpha_breaks: Vec<Breakpoint>,
    pub beta_breaks: Vec<Breakpoint>,
    pub union_breaks: Vec<Breakpoint>,
    pub bin_months: u32,
    pub density: Vec<DensityBin>,
}

impl BreakpointReport {
    /// Density bins ordered by decreasing count (earlier bins first on ties).
    pub fn ranked_bins(&self) -> Vec<DensityBin> {
        let mut bins = self.density.clone();
        bins.sort_by(|a, b| b.count.cmp(&a.count).then(a.start.cmp(&b.start)));
        bins
    }
}

/// Merges the two break sets, dates them on the shared grid `times` and counts them in
/// consecutive `bin_months`-month bins anchored at `times[0]`.
pub fn union_and_density(
    alpha_breaks: &[usize],
    beta_breaks: &[usize],
    times: &[NaiveDate],
    bin_months: u32,
) -> Result<BreakpointReport> {
    if bin_months == 0 {
        return Err(Error::Argument(
            "bin width must be at least one month".into(),
        ));
    }
    let date = |idx: usize| -> Result<Breakpoint> {
        if idx == 0 || idx >= times.len() {
            return Err(Error::Argument(format!(
                "breakpoint {idx} outside (0, {})",
                times.len()
            )));
        }
        Ok(Breakpoint {
            index: idx,
            date: times[idx],
        })
    };
    let dated = |idx: &[usize]| -> Result<Vec<Breakpoint>> {
        let mut v: Vec<usize> = idx.to_vec();
        v.sort_unstable();
        v.dedup();
        v.into_iter().map(date).collect()
    };
    let alpha = dated(alpha_breaks)?;
    let beta = dated(beta_breaks)?;
    let mut all: Vec<usize> = alpha_breaks.iter().chain(beta_breaks).copied().collect();
    all.sort_unstable();
    all.dedup();
    let union = dated(&all)?;

    let mut density = Vec::new();
    if let (Some(&first), Some(&last)) = (times.first(), times.last()) {
        let mut i = 0u32;
        loop {
            let start = first
                .checked_add_months(Months::new(bin_months * i))
                .ok_or_else(|| Error::Argument("density bins run past the calendar".into()))?;
            if start > last {
                break;
            }
            let end = first
                .checked_add_months(Months::new(bin_months * (i + 1)))
                .ok_or_else(|| Error::Argument("density bins run past the calendar".into()))?;
            let count = union
                .iter()
                .filter(|b| b.date >= start && b.date < end)
                .count();
            density.push(DensityBin { start, end, count });
            i += 1;
        }
    }
    Ok(BreakpointReport {
        alpha_breaks: alpha,
        beta_breaks: beta,
        union_breaks: union,
        bin_months,
        density,
    })
}

/// Imputes, segments the alpha and beta tracks independently, and aggregates the
/// union of their breakpoints.
pub fn track_breakpoints(
    track: &CoefficientTrack,
    cfg: &SegmentationConfig,
    bin_months: u32,
) -> Result<BreakpointReport> {
    let segment = |values: &[Option<f64>]| -> Result<Vec<usize>> {
        let signal = Signal::new(values.to_vec(), track.times.clone())?;
        let dense = impute_undefined(&signal)?
            .dense()
            .expect("imputation leaves no gaps");
        Ok(binseg(&dense, cfg)?.breaks)
    };
    let alpha = segment(&track.alpha)?;
    let beta = segment(&track.beta)?;
    union_and_density(&alpha, &beta, &track.times, bin_months)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic_dates;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn step_signal() -> Vec<f64> {
        let mut v = vec![0.0; 50];
        v.extend(vec![10.0; 50]);
        v
    }

    #[test]
    fn median_imputation() {
        let s = Signal::new(vec![Some(1.0), None, Some(3.0)], synthetic_dates(3)).unwrap();
        assert_eq!(
            impute_undefined(&s).unwrap().dense().unwrap(),
            vec![1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn imputation_is_identity_without_gaps() {
        let s = Signal::new(vec![Some(4.0), Some(-1.0)], synthetic_dates(2)).unwrap();
        assert_eq!(impute_undefined(&s).unwrap(), s);
    }

    #[test]
    fn imputation_from_single_value() {
        let mut v = vec![None; 5];
        v.push(Some(7.0));
        let s = Signal::new(v, synthetic_dates(6)).unwrap();
        assert_eq!(impute_undefined(&s).unwrap().dense().unwrap(), vec![7.0; 6]);
    }

    #[test]
    fn imputation_needs_a_value() {
        let s = Signal::new(vec![None, None], synthetic_dates(2)).unwrap();
        assert!(impute_undefined(&s).is_err());
    }

    #[test]
    fn clean_step_breaks_at_fifty() {
        let seg = binseg(&step_signal(), &SegmentationConfig::with_breakpoints(1)).unwrap();
        assert_eq!(seg.breaks, vec![50]);
        assert_eq!(seg.cost, 0.0);
        let dp = dp_optimal(&step_signal(), 1, 2).unwrap();
        assert_eq!(dp.breaks, vec![50]);
    }

    #[test]
    fn constant_signal_takes_first_feasible_index() {
        let seg = binseg(&[3.0; 20], &SegmentationConfig::with_breakpoints(1)).unwrap();
        assert_eq!(seg.breaks, vec![2]);
        assert_eq!(seg.gains, vec![0.0]);
    }

    #[test]
    fn jump_restricts_candidates() {
        let cfg = SegmentationConfig {
            n_breakpoints: 1,
            min_segment: 2,
            jump: 7,
        };
        let seg = binseg(&step_signal(), &cfg).unwrap();
        assert_eq!(seg.breaks[0] % 7, 0);
        assert!(seg.breaks[0] == 49);
    }

    #[test]
    fn infeasible_config_rejected() {
        let xs = [1.0; 10];
        assert!(binseg(&xs, &SegmentationConfig::with_breakpoints(5)).is_err());
        assert!(dp_optimal(&xs, 5, 2).is_err());
        assert!(binseg(
            &xs,
            &SegmentationConfig {
                min_segment: 1,
                ..SegmentationConfig::with_breakpoints(1)
            }
        )
        .is_err());
    }

    #[test]
    fn greedy_is_suboptimal_on_staircase() {
        // Found by exhaustive search over small staircases: the first greedy split
        // lands mid-staircase and cannot be undone. Costs checked by brute force.
        let xs = [0.0, 0.0, 0.0, 0.0, 3.0, 3.0, 4.0, 4.0, 7.0, 7.0, 7.0, 7.0];
        let greedy = binseg(&xs, &SegmentationConfig::with_breakpoints(2)).unwrap();
        let exact = dp_optimal(&xs, 2, 2).unwrap();
        assert_eq!(exact.breaks, vec![4, 8]);
        assert!((exact.cost - 1.0).abs() < 1e-12);
        assert!((greedy.cost - 12.0).abs() < 1e-12, "{greedy:?}");
    }

    #[test]
    fn union_dedups_shared_break() {
        let times = synthetic_dates(40);
        let r = union_and_density(&[10], &[10], &times, 6).unwrap();
        assert_eq!(r.union_breaks.len(), 1);
        assert_eq!(r.union_breaks[0].index, 10);
        assert_eq!(r.density.iter().map(|b| b.count).sum::<usize>(), 1);
    }

    #[test]
    fn disjoint_unions_add_up() {
        let times = synthetic_dates(1000);
        let r = union_and_density(&[5, 100, 300], &[50, 400, 700, 900], &times, 6).unwrap();
        assert_eq!(r.union_breaks.len(), 7);
        assert_eq!(r.density.iter().map(|b| b.count).sum::<usize>(), 7);
        assert!(r.union_breaks.windows(2).all(|w| w[0].date < w[1].date));
    }

    #[test]
    fn density_bins_are_anchored_at_start() {
        let times = synthetic_dates(800);
        let r = union_and_density(&[], &[], &times, 6).unwrap();
        assert_eq!(r.density[0].start, times[0]);
        assert_eq!(
            r.density[1].start,
            NaiveDate::from_ymd_opt(2000, 7, 1).unwrap()
        );
        assert!(r.density.last().unwrap().end > *times.last().unwrap());
        assert!(r.density.iter().all(|b| b.count == 0));
        assert!(union_and_density(&[], &[], &[], 6)
            .unwrap()
            .density
            .is_empty());
    }

    #[test]
    fn out_of_range_break_rejected() {
        let times = synthetic_dates(10);
        assert!(union_and_density(&[0], &[], &times, 6).is_err());
        assert!(union_and_density(&[10], &[], &times, 6).is_err());
    }

    fn noisy_steps(seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 150;
        let breaks = vec![40, 80, 115];
        let mut level: f64 = 0.0;
        let mut xs = Vec::with_capacity(n);
        for i in 0..n {
            if breaks.contains(&i) {
                level += if rng.random::<bool>() { 6.0 } else { -6.0 };
            }
            let e: f64 = StandardNormal.sample(&mut rng);
            xs.push(level + e);
        }
        (xs, breaks)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn binseg_output_is_well_formed(seed in any::<u64>(), k in 1usize..10, min_seg in 2usize..6) {
            let (xs, _) = noisy_steps(seed);
            let cfg = SegmentationConfig { n_breakpoints: k, min_segment: min_seg, jump: 1 };
            let seg = binseg(&xs, &cfg).unwrap();
            prop_assert!(seg.breaks.windows(2).all(|w| w[1] - w[0] >= min_seg));
            prop_assert!(seg.breaks[0] >= min_seg && xs.len() - seg.breaks.last().unwrap() >= min_seg);
            prop_assert!(seg.gains.iter().all(|&g| g >= 0.0));
            // Total cost never increases as splits are added.
            let mut prev = segmentation_cost(&xs, &[]);
            for j in 1..=k {
                let c = binseg(&xs, &SegmentationConfig { n_breakpoints: j, ..cfg }).unwrap().cost;
                prop_assert!(c <= prev + 1e-9 * prev.max(1.0));
                prev = c;
            }
        }

        #[test]
        fn dp_dominates_binseg(seed in any::<u64>(), k in 1usize..4) {
            let (xs, _) = noisy_steps(seed);
            let g = binseg(&xs, &SegmentationConfig::with_breakpoints(k)).unwrap();
            let d = dp_optimal(&xs, k, 2).unwrap();
            prop_assert!(d.cost <= g.cost + 1e-9 * g.cost.max(1.0));
            prop_assert!((segmentation_cost(&xs, &d.breaks) - d.cost).abs() <= 1e-9 * d.cost.max(1.0));
        }

        #[test]
        fn affine_maps_keep_breakpoints(seed in any::<u64>(), a in prop_oneof![-20.0f64..-0.5, 0.5f64..20.0], b in -50.0f64..50.0) {
            let (xs, truth) = noisy_steps(seed);
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let cfg = SegmentationConfig::with_breakpoints(truth.len());
            prop_assert_eq!(binseg(&xs, &cfg).unwrap().breaks, binseg(&ys, &cfg).unwrap().breaks);
            prop_assert_eq!(dp_optimal(&xs, truth.len(), 2).unwrap().breaks, dp_optimal(&ys, truth.len(), 2).unwrap().breaks);
        }

        #[test]
        fn density_ignores_argument_order(a in proptest::collection::vec(1usize..500, 0..10), b in proptest::collection::vec(1usize..500, 0..10)) {
            let times = synthetic_dates(500);
            let x = union_and_density(&a, &b, &times, 6).unwrap();
            let y = union_and_density(&b, &a, &times, 6).unwrap();
            prop_assert_eq!(&x.density, &y.density);
            prop_assert_eq!(&x.union_breaks, &y.union_breaks);
            prop_assert_eq!(x.density.iter().map(|d| d.count).sum::<usize>(), x.union_breaks.len());
        }
    }
}
