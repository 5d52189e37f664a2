//! Monte Carlo safety verification and the probabilistic safety bound.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use super::filter::{mcbf_value, Mcbf};
use crate::envs::EnvironmentSpec;
use crate::error::{config, contract, Result};
use crate::math::{random_unit, SimRng};

/// `1 − exp(−c₃/δ_v²)` with `c₃ = b_min²/(2L_b²)`.
pub fn theoretical_bound(b_min: f64, l_b: f64, delta_v: f64) -> Result<f64> {
    if !(b_min > 0.0 && l_b > 0.0 && delta_v > 0.0) {
        return Err(contract(format!(
            "bound needs positive inputs, got b_min={b_min}, L_b={l_b}, delta_v={delta_v}"
        )));
    }
    let c3 = b_min * b_min / (2.0 * l_b * l_b);
    Ok(-(-c3 / (delta_v * delta_v)).exp_m1())
}

/// Two-sided Clopper–Pearson interval for `k` successes out of `n`.
pub fn clopper_pearson(k: usize, n: usize, confidence: f64) -> (f64, f64) {
    assert!(n > 0 && k <= n);
    let alpha = 1.0 - confidence;
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(kf, nf - kf + 1.0).unwrap().inverse_cdf(alpha / 2.0)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new(kf + 1.0, nf - kf).unwrap().inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

/// Safety outcome of one episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSafety {
    pub violated: bool,
    /// Smallest declared-constraint value along the episode.
    pub min_b0: f64,
    pub infeasible_steps: usize,
}

/// Runs seeded episodes for the verifier. Implementations must be pure in
/// `(index, seed)` so results do not depend on scheduling.
pub trait EpisodeSource: Sync {
    fn run(&self, index: usize) -> Result<EpisodeSafety>;
}

impl<F> EpisodeSource for F
where
    F: Fn(usize) -> Result<EpisodeSafety> + Sync,
{
    fn run(&self, index: usize) -> Result<EpisodeSafety> {
        self(index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub n_episodes: usize,
    pub horizon: usize,
    pub delta_v: f64,
    pub delta_w: f64,
    pub violations: usize,
    pub rate: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    /// `None` when the bound is undefined (`δ_v = 0` or `b_min ≤ 0`).
    pub theoretical_bound: Option<f64>,
    pub b_min: f64,
    #[serde(rename = "L_b")]
    pub l_b: f64,
    pub kappa: f64,
}

impl VerificationReport {
    /// Lower 95% confidence bound on the probability of staying safe.
    pub fn safety_lower_bound(&self) -> f64 {
        1.0 - self.ci95_high
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyParams {
    pub n_episodes: usize,
    pub horizon: usize,
    pub delta_v: f64,
    pub delta_w: f64,
    pub b_min: f64,
    pub l_b: f64,
    pub kappa: f64,
}

/// Counts episodes with any step where `b₀(x_true) < 0`.
pub fn verify_safety_mc(source: &dyn EpisodeSource, p: &VerifyParams) -> Result<VerificationReport> {
    if p.n_episodes < 30 {
        return Err(contract("verification needs at least 30 episodes"));
    }
    let outcomes: Vec<EpisodeSafety> = (0..p.n_episodes)
        .into_par_iter()
        .map(|i| source.run(i))
        .collect::<Result<_>>()?;
    let violations = outcomes.iter().filter(|o| o.violated).count();
    let (lo, hi) = clopper_pearson(violations, p.n_episodes, 0.95);
    let bound = if p.delta_v > 0.0 && p.b_min > 0.0 && p.l_b > 0.0 {
        Some(theoretical_bound(p.b_min, p.l_b, p.delta_v)?)
    } else {
        None
    };
    Ok(VerificationReport {
        n_episodes: p.n_episodes,
        horizon: p.horizon,
        delta_v: p.delta_v,
        delta_w: p.delta_w,
        violations,
        rate: violations as f64 / p.n_episodes as f64,
        ci95_low: lo,
        ci95_high: hi,
        theoretical_bound: bound,
        b_min: p.b_min,
        l_b: p.l_b,
        kappa: p.kappa,
    })
}

/// `b_min` over sampled nominal states and a 1.1-inflated estimate of the
/// measurement Lipschitz constant of [`mcbf_value`].
///
/// Half of the measurement pairs are radial (both offsets along one
/// direction), where the penalty term attains its Lipschitz constant.
pub fn estimate_barrier_constants(
    env: &EnvironmentSpec,
    mcbf: &Mcbf,
    samples: &[DVector<f64>],
    rng: &mut SimRng,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(config("estimate_barrier_constants needs a nonempty sample set"));
    }
    let b_min = samples
        .iter()
        .map(|x| mcbf.base.min_value(x))
        .fold(f64::INFINITY, f64::min);
    let map = env.measurement.as_ref();
    let dim = map.output_dim();
    let mut l: f64 = 0.0;
    for (k, x) in samples.iter().enumerate() {
        let h = map.measure(x);
        let d1 = random_unit(dim, rng);
        let d2 = if k % 2 == 0 { d1.clone() } else { random_unit(dim, rng) };
        let r1 = rng.random_range(0.01..1.0);
        let r2 = rng.random_range(0.01..1.0);
        let y1 = &h + d1 * r1;
        let y2 = &h + d2 * r2;
        let dy = (&y1 - &y2).norm();
        if dy > 1e-12 {
            let q = (mcbf_value(mcbf, x, &y1, map) - mcbf_value(mcbf, x, &y2, map)).abs() / dy;
            l = l.max(q);
        }
    }
    Ok((b_min, 1.1 * l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_values() {
        let b = theoretical_bound(0.5, 1.0, 0.1).unwrap();
        assert!((b - (1.0 - (-12.5f64).exp())).abs() < 1e-15);
        assert!((theoretical_bound(100.0, 1.0, 0.1).unwrap() - 1.0).abs() < 1e-12);
        let b2 = theoretical_bound(0.5, 1.0, 0.2).unwrap();
        assert!((b2 - (1.0 - (-3.125f64).exp())).abs() < 1e-15);
        assert!(b2 < b);
        assert!(theoretical_bound(0.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn clopper_pearson_zero_successes() {
        let (lo, hi) = clopper_pearson(0, 10, 0.95);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025f64.powf(0.1))).abs() < 1e-8);
        let (lo, hi) = clopper_pearson(10, 10, 0.95);
        assert!((lo - 0.025f64.powf(0.1)).abs() < 1e-8);
        assert_eq!(hi, 1.0);
    }
}
