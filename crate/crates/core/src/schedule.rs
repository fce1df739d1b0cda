//! Noise schedules and DDIM sub-schedules.
//!
//! Timesteps are 1-indexed: `t` runs over `1..=T`, and `alpha_bar(0) = 1`
//! denotes the clean end of the chain.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::ImageGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    /// DDPM posterior standard deviation per step.
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(invalid("steps", format!("need at least 2 steps, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(invalid(
                "beta",
                format!("need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"),
            ));
        }
        let last = (steps - 1) as f64;
        let betas = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / last)
            .collect();
        Self::from_betas(betas)
    }

    /// Builds a schedule from explicit betas, which must be nondecreasing in `(0, 1)`.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 {
            return Err(invalid("beta", "need at least 2 steps"));
        }
        if beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(invalid("beta", "every beta must lie in (0, 1)"));
        }
        if beta.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("beta", "betas must be nondecreasing"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])).sqrt()
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product up to `t`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// DDPM posterior std `sqrt(beta_t (1 - abar_{t-1}) / (1 - abar_t))`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
    pub fn forward_diffuse(&self, x0: &ImageGrid, t: usize, eps: &ImageGrid) -> Result<ImageGrid> {
        self.check_t(t)?;
        x0.check_same_shape(eps, 1)?;
        Ok(forward_diffuse_with(x0, self.alpha_bar(t), eps))
    }
}

/// Forward marginal draw for an explicit `alpha_bar`.
pub fn forward_diffuse_with(x0: &ImageGrid, alpha_bar: f64, eps: &ImageGrid) -> ImageGrid {
    let mut out = x0.scaled(alpha_bar.sqrt());
    out.add_scaled((1.0 - alpha_bar).sqrt(), eps);
    out
}

/// Descending subset of `1..=T` visited by a DDIM sampler, ending at `t = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdimSubSchedule {
    steps: Vec<usize>,
    eta: f64,
}

impl DdimSubSchedule {
    /// `count` roughly evenly spaced timesteps from `T` down to `1`.
    pub fn uniform(schedule: &NoiseSchedule, count: usize, eta: f64) -> Result<Self> {
        let total = schedule.steps();
        if count == 0 || count > total {
            return Err(invalid(
                "ddim_steps",
                format!("must be in 1..={total}, got {count}"),
            ));
        }
        let mut steps: Vec<usize> = if count == 1 {
            vec![1]
        } else {
            (0..count)
                .map(|i| 1 + ((total - 1) as f64 * i as f64 / (count - 1) as f64).round() as usize)
                .collect()
        };
        steps.dedup();
        steps.reverse();
        Self::new(steps, eta)
    }

    pub fn new(steps: Vec<usize>, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(invalid("eta", format!("must be in [0, 1], got {eta}")));
        }
        if steps.last() != Some(&1) {
            return Err(invalid("steps", "sub-schedule must end at t = 1"));
        }
        if steps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("steps", "sub-schedule must be strictly decreasing"));
        }
        Ok(Self { steps, eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    /// `(t, t_prev)` pairs in sampling order; the last pair is `(1, 0)`.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, self.steps.get(i + 1).copied().unwrap_or(0)))
    }

    /// DDIM noise scale
    /// `eta * sqrt((1 - abar_prev) / (1 - abar_t)) * sqrt(1 - abar_t / abar_prev)`.
    pub fn sigma(&self, schedule: &NoiseSchedule, t: usize, t_prev: usize) -> f64 {
        ddim_sigma(self.eta, schedule.alpha_bar(t), schedule.alpha_bar(t_prev))
    }
}

pub fn ddim_sigma(eta: f64, alpha_bar: f64, alpha_bar_prev: f64) -> f64 {
    let ratio = ((1.0 - alpha_bar_prev) / (1.0 - alpha_bar)).max(0.0);
    let decay = (1.0 - alpha_bar / alpha_bar_prev).max(0.0);
    eta * ratio.sqrt() * decay.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_standard_normal, GridDims, SeededRng};
    use proptest::prelude::*;

    #[test]
    fn two_step_products() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.sigma(1), 0.0);
    }

    #[test]
    fn default_schedule_reaches_near_pure_noise() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        // Independent product over the closed-form betas.
        let mut prod = 1.0;
        for i in 0..1000 {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
        }
        assert!((s.alpha_bar(1000) - prod).abs() < 1e-15);
        assert!((s.alpha_bar(1000) - 4.0358e-5).abs() < 1e-8);
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(NoiseSchedule::linear(1000, 0.02, 1e-4).is_err());
        assert!(NoiseSchedule::linear(1, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn schedule_invariants() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        assert!(s.betas().windows(2).all(|w| w[0] <= w[1]));
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        for t in 1..=s.steps() {
            assert!(s.sigma(t).powi(2) <= 1.0 - s.alpha_bar(t - 1) + 1e-15);
        }
    }

    #[test]
    fn forward_diffuse_closed_forms() {
        let d = GridDims::new(4, 4, 1).unwrap();
        let x0 = ImageGrid::filled(d, 0.3);
        let eps = sample_standard_normal(&mut SeededRng::new(1, 0), d);
        assert_eq!(forward_diffuse_with(&x0, 1.0, &eps), x0);

        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        let out = s.forward_diffuse(&x0, 2, &ImageGrid::zeros(d)).unwrap();
        assert!(out.as_slice().iter().all(|v| (v - 0.72f64.sqrt() * 0.3).abs() < 1e-15));

        let out = s
            .forward_diffuse(&ImageGrid::zeros(d), 2, &ImageGrid::filled(d, 1.0))
            .unwrap();
        assert!(out.as_slice().iter().all(|v| (v - 0.28f64.sqrt()).abs() < 1e-15));
        assert!((0.28f64.sqrt() - 0.5292).abs() < 1e-4);

        assert!(s.forward_diffuse(&x0, 0, &eps).is_err());
        assert!(s.forward_diffuse(&x0, 3, &eps).is_err());
    }

    #[test]
    fn forward_variance_matches_one_minus_alpha_bar() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let d = GridDims::new(100, 100, 1).unwrap();
        let x0 = ImageGrid::zeros(d);
        let mut rng = SeededRng::new(9, 0);
        for t in [1, 50, 300, 1000] {
            let eps = sample_standard_normal(&mut rng, d);
            let x = s.forward_diffuse(&x0, t, &eps).unwrap();
            let var = x.as_slice().iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
            let expected = 1.0 - s.alpha_bar(t);
            // 10^4 draws: relative sd of the variance estimate is ~1.4%.
            assert!((var / expected - 1.0).abs() < 0.06, "t={t}: {var} vs {expected}");
        }
    }

    #[test]
    fn uniform_sub_schedule_shape() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let sub = DdimSubSchedule::uniform(&s, 50, 0.0).unwrap();
        assert_eq!(sub.steps().len(), 50);
        assert_eq!(sub.steps()[0], 1000);
        assert_eq!(*sub.steps().last().unwrap(), 1);
        assert!(sub.steps().windows(2).all(|w| w[0] > w[1]));
        let pairs: Vec<_> = sub.transitions().collect();
        assert_eq!(pairs.last(), Some(&(1, 0)));
        assert!(sub.transitions().all(|(t, tp)| sub.sigma(&s, t, tp) == 0.0));
        assert!(DdimSubSchedule::new(vec![5, 3, 2], 0.0).is_err());
        assert!(DdimSubSchedule::new(vec![5, 5, 1], 0.0).is_err());
        assert!(DdimSubSchedule::new(vec![5, 1], 1.5).is_err());
    }

    proptest! {
        #[test]
        fn ddim_sigma_is_always_feasible(eta in 0.0f64..=1.0, count in 1usize..200) {
            let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
            let sub = DdimSubSchedule::uniform(&s, count, eta).unwrap();
            for (t, tp) in sub.transitions() {
                let sigma = sub.sigma(&s, t, tp);
                prop_assert!(sigma * sigma <= 1.0 - s.alpha_bar(tp) + 1e-15);
            }
        }
    }
}
