//! Euler–Maruyama simulation of one-dimensional Langevin models.
//!
//! Models are parameterised by their first two Kramers–Moyal coefficients,
//! `D1(x) = a(x)` and `D2(x) = b(x)^2 / 2`, so simulated paths can be fed straight
//! back into [`crate::km`] without any change of convention. The Itô update is
//!
//! ```text
//! x[k+1] = x[k] + D1(x[k]) dt + sqrt(2 D2(x[k]) dt) * xi[k],   xi[k] ~ N(0, 1)
//! ```
//!
//! Noise comes from a seeded ChaCha8 stream, so identical seeds reproduce identical
//! paths on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial drift and diffusion with an optional reflecting domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangevinModel {
    /// `[a0, a1, a2]` for `D1(x) = a0 + a1 x + a2 x^2`.
    pub drift: [f64; 3],
    /// `[eps, delta, beta]` for `D2(x) = eps + delta x + beta x^2`.
    pub diffusion: [f64; 3],
    pub dt: f64,
    pub x0: f64,
    /// Reflecting bounds `(lo, hi)`.
    #[serde(default)]
    pub domain: Option<(f64, f64)>,
}

impl LangevinModel {
    /// Ornstein–Uhlenbeck: `dX = -theta X dt + sqrt(2 d2) dW`.
    pub fn ornstein_uhlenbeck(theta: f64, d2: f64, dt: f64) -> Self {
        Self {
            drift: [0.0, -theta, 0.0],
            diffusion: [d2, 0.0, 0.0],
            dt,
            x0: 0.0,
            domain: None,
        }
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = Some((lo, hi));
        self
    }

    pub fn d1(&self, x: f64) -> f64 {
        let [a0, a1, a2] = self.drift;
        a0 + x * (a1 + x * a2)
    }

    pub fn d2(&self, x: f64) -> f64 {
        let [eps, delta, beta] = self.diffusion;
        eps + x * (delta + x * beta)
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Argument(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !self.x0.is_finite()
            || self
                .drift
                .iter()
                .chain(&self.diffusion)
                .any(|c| !c.is_finite())
        {
            return Err(Error::Argument("model coefficients must be finite".into()));
        }
        if let Some((lo, hi)) = self.domain {
            if !(lo < hi) {
                return Err(Error::Argument(format!("empty domain [{lo}, {hi}]")));
            }
            if !(lo..=hi).contains(&self.x0) {
                return Err(Error::Argument(format!(
                    "x0 = {} outside [{lo}, {hi}]",
                    self.x0
                )));
            }
        }
        Ok(())
    }

    /// One Euler–Maruyama step driven by the standard-normal draw `xi`.
    pub fn step(&self, x: f64, xi: f64, index: usize) -> Result<f64> {
        let d2 = self.d2(x);
        if d2 < 0.0 {
            return Err(Error::Simulation {
                step: index,
                state: x,
                d2,
            });
        }
        let next = x + self.d1(x) * self.dt + (2.0 * d2 * self.dt).sqrt() * xi;
        let next = match self.domain {
            Some((lo, hi)) => reflect(next, lo, hi),
            None => next,
        };
        if !next.is_finite() {
            return Err(Error::Estimation(format!("path diverged at step {index}")));
        }
        Ok(next)
    }
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&x) {
        return x;
    }
    let width = hi - lo;
    let mut y = (x - lo).rem_euclid(2.0 * width);
    if y > width {
        y = 2.0 * width - y;
    }
    lo + y
}

/// A simulated state sequence together with its generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPath {
    pub values: Vec<f64>,
    pub seed: u64,
    pub model: LangevinModel,
}

/// Concatenated multi-regime simulation with its ground-truth change indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimePath {
    pub values: Vec<f64>,
    pub seed: u64,
    pub segments: Vec<(LangevinModel, usize)>,
    /// Index of the first observation generated by each model after the first.
    pub change_indices: Vec<usize>,
}

/// Simulates `n_steps` states, the first being `model.x0`.
pub fn euler_maruyama(model: &LangevinModel, n_steps: usize, seed: u64) -> Result<SimulatedPath> {
    let values = simulate(&[(model.clone(), n_steps)], seed)?;
    Ok(SimulatedPath {
        values,
        seed,
        model: model.clone(),
    })
}

/// Runs the models back to back. Each segment continues from the previous endpoint
/// (only the first model's `x0` is used); the transition into observation `k` uses the
/// model that owns `k`. A single segment reproduces [`euler_maruyama`] exactly.
pub fn synthetic_regime_series(
    segments: &[(LangevinModel, usize)],
    seed: u64,
) -> Result<RegimePath> {
    let values = simulate(segments, seed)?;
    let mut change_indices = Vec::new();
    let mut offset = 0;
    for (_, len) in &segments[..segments.len() - 1] {
        offset += len;
        change_indices.push(offset);
    }
    Ok(RegimePath {
        values,
        seed,
        segments: segments.to_vec(),
        change_indices,
    })
}

fn simulate(segments: &[(LangevinModel, usize)], seed: u64) -> Result<Vec<f64>> {
    if segments.is_empty() {
        return Err(Error::Argument("no segments to simulate".into()));
    }
    let total: usize = segments.iter().map(|(_, n)| n).sum();
    if total == 0 || segments.iter().any(|(_, n)| *n == 0) {
        return Err(Error::Argument(
            "every segment needs at least one step".into(),
        ));
    }
    for (m, _) in segments {
        m.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(total);
    let mut x = segments[0].0.x0;
    values.push(x);
    for (seg_idx, (model, len)) in segments.iter().enumerate() {
        let steps = if seg_idx == 0 { len - 1 } else { *len };
        for _ in 0..steps {
            let xi: f64 = StandardNormal.sample(&mut rng);
            x = model.step(x, xi, values.len())?;
            values.push(x);
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn no_dynamics_stays_put() {
        let m = LangevinModel {
            drift: [0.0; 3],
            diffusion: [0.0; 3],
            dt: 0.1,
            x0: 2.5,
            domain: None,
        };
        let p = euler_maruyama(&m, 100, 7).unwrap();
        assert_eq!(p.values.len(), 100);
        assert!(p.values.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn same_seed_same_path() {
        let m = LangevinModel::ornstein_uhlenbeck(1.0, 0.125, 0.01);
        let a = euler_maruyama(&m, 10_000, 42).unwrap();
        let b = euler_maruyama(&m, 10_000, 42).unwrap();
        assert_eq!(a.values, b.values);
        let c = euler_maruyama(&m, 10_000, 43).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn ou_stationary_variance() {
        // Var = D2 / theta = 0.125.
        let m = LangevinModel::ornstein_uhlenbeck(1.0, 0.125, 0.01);
        let p = euler_maruyama(&m, 500_000, 42).unwrap();
        let s = stats::sample_std(&p.values[1000..]);
        let var = s * s;
        assert!((var - 0.125).abs() / 0.125 < 0.03, "variance {var}");
    }

    #[test]
    fn negative_diffusion_names_step() {
        let m = LangevinModel {
            drift: [1.0, 0.0, 0.0],
            diffusion: [0.1, -1.0, 0.0],
            dt: 0.1,
            x0: 0.0,
            domain: None,
        };
        match euler_maruyama(&m, 1000, 1).unwrap_err() {
            Error::Simulation { step, state, d2 } => {
                assert!(step > 0);
                assert!(d2 < 0.0);
                assert!(state > 0.1);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn reflection_keeps_path_in_domain() {
        let m = LangevinModel {
            drift: [0.0; 3],
            diffusion: [0.5, 0.0, 0.0],
            dt: 0.1,
            x0: 0.5,
            domain: Some((0.0, 1.0)),
        };
        let p = euler_maruyama(&m, 20_000, 3).unwrap();
        assert!(p.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(reflect(1.2, 0.0, 1.0), 0.8);
        assert!((reflect(-0.3, 0.0, 1.0) - 0.3).abs() < 1e-15);
        assert!((reflect(2.3, 0.0, 1.0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_segment_matches_plain_simulation() {
        let m = LangevinModel::ornstein_uhlenbeck(2.0, 0.3, 0.01).with_x0(0.4);
        let plain = euler_maruyama(&m, 5000, 11).unwrap();
        let regime = synthetic_regime_series(&[(m, 5000)], 11).unwrap();
        assert_eq!(plain.values, regime.values);
        assert!(regime.change_indices.is_empty());
    }

    #[test]
    fn two_segment_change_at_midpoint() {
        let a = LangevinModel::ornstein_uhlenbeck(1.0, 0.125, 0.01);
        let b = LangevinModel::ornstein_uhlenbeck(3.0, 0.125, 0.01);
        let r = synthetic_regime_series(&[(a.clone(), 1000), (b, 1000)], 5).unwrap();
        assert_eq!(r.values.len(), 2000);
        assert_eq!(r.change_indices, vec![1000]);
        // The first segment is unaffected by what follows.
        let plain = euler_maruyama(&a, 1000, 5).unwrap();
        assert_eq!(&r.values[..1000], &plain.values[..]);
    }

    #[test]
    fn rejects_bad_dt() {
        let m = LangevinModel::ornstein_uhlenbeck(1.0, 0.1, 0.0);
        assert!(euler_maruyama(&m, 10, 1).is_err());
    }
}
