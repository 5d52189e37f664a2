//! Training triples `(x, u, ẋ)` with per-point covariance.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::{eval_dynamics, integrate_step, EnvironmentSpec, Method};
use crate::error::{config, contract, Result};
use crate::math::{SimRng, State};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub xdot: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<DataPoint>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Inverse covariances; fails with the index of the first matrix that is
    /// not symmetric positive definite.
    pub fn precisions(&self) -> Result<Vec<DMatrix<f64>>> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let asym = (&p.sigma - p.sigma.transpose()).amax();
                let chol = if asym <= 1e-12 * (1.0 + p.sigma.amax()) {
                    p.sigma.clone().cholesky()
                } else {
                    None
                };
                chol.map(|c| c.inverse())
                    .ok_or_else(|| contract(format!("covariance of data point {i} is not positive definite")))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    /// `ẋ = f(x,u) + v` queried at logged states.
    Query,
    /// Central differences of noisy state logs.
    FiniteDifference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source: DerivativeSource,
    pub n_rollouts: usize,
    pub horizon: usize,
    /// Bound on the norm of the injected noise.
    pub delta_v: f64,
}

impl DatasetConfig {
    /// Per-component `σ = δ_v/(3√n)`, so the truncated draw has `‖v‖ ≤ δ_v`.
    pub fn sigma(&self, dim: usize) -> f64 {
        self.delta_v / (3.0 * (dim as f64).sqrt())
    }
}

/// Componentwise Gaussian with standard deviation `sigma`, truncated to `‖v‖ ≤ 3σ√dim`.
pub fn truncated_noise(dim: usize, sigma: f64, rng: &mut SimRng) -> DVector<f64> {
    if sigma == 0.0 {
        return DVector::zeros(dim);
    }
    loop {
        let v = DVector::from_fn(dim, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z
        });
        if v.norm() <= 3.0 * (dim as f64).sqrt() {
            return v * sigma;
        }
    }
}

/// Rolls out the noiseless system under `excitation` and records triples.
///
/// Query mode yields `n_rollouts·horizon` points with `Σ = σ²I` (`I` when
/// `σ = 0`). Finite-difference mode yields `n_rollouts·(horizon − 1)` points
/// from `(ỹ_{k+1} − ỹ_{k−1})/2dt` with `Σ = σ²/(2dt²)·I`.
pub fn build_dataset(
    env: &EnvironmentSpec,
    cfg: &DatasetConfig,
    start: &mut dyn FnMut(&mut SimRng) -> State,
    excitation: &mut dyn FnMut(usize, &State, &mut SimRng) -> DVector<f64>,
    rng: &mut SimRng,
) -> Result<Dataset> {
    if !(cfg.delta_v >= 0.0) {
        return Err(config("dataset noise bound must be nonnegative"));
    }
    if cfg.source == DerivativeSource::FiniteDifference && cfg.horizon < 3 {
        return Err(config("finite-difference datasets need a horizon of at least 3"));
    }
    let n = env.state_dim();
    let sigma = cfg.sigma(n);
    let mut points = Vec::new();
    for _ in 0..cfg.n_rollouts {
        let mut x = start(rng);
        let mut xs = vec![x.clone()];
        let mut us = Vec::with_capacity(cfg.horizon);
        for k in 0..cfg.horizon {
            let u = excitation(k, &x, rng);
            let (u, _) = env.clamp_control(&u);
            if cfg.source == DerivativeSource::Query {
                let f = eval_dynamics(env, &x, &u)?;
                let xdot = f + truncated_noise(n, sigma, rng);
                let s = if sigma > 0.0 { sigma * sigma } else { 1.0 };
                points.push(DataPoint {
                    x: x.clone(),
                    u: u.clone(),
                    xdot,
                    sigma: DMatrix::identity(n, n) * s,
                });
            }
            x = integrate_step(env, &x, &u, &DVector::zeros(n), 0.0, Method::Rk4)?;
            xs.push(x.clone());
            us.push(u);
        }
        if cfg.source == DerivativeSource::FiniteDifference {
            let noisy: Vec<State> = xs.iter().map(|x| x + truncated_noise(n, sigma, rng)).collect();
            let var = if sigma > 0.0 {
                sigma * sigma / (2.0 * env.dt * env.dt)
            } else {
                1.0
            };
            for k in 1..cfg.horizon {
                points.push(DataPoint {
                    x: noisy[k].clone(),
                    u: us[k].clone(),
                    xdot: (&noisy[k + 1] - &noisy[k - 1]) / (2.0 * env.dt),
                    sigma: DMatrix::identity(n, n) * var,
                });
            }
        }
    }
    Ok(Dataset { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::building;
    use crate::math::{rng_from_seed, uniform_in_box};

    fn starts(r: &mut SimRng) -> State {
        let b: Vec<(f64, f64)> = [(21.0, 25.0); 3].into_iter().chain([(40.0, 60.0); 3]).collect();
        uniform_in_box(&b, r)
    }

    #[test]
    fn noiseless_query_matches_dynamics() {
        let env = building::default_spec();
        let cfg = DatasetConfig {
            source: DerivativeSource::Query,
            n_rollouts: 2,
            horizon: 10,
            delta_v: 0.0,
        };
        let mut rng = rng_from_seed(5);
        let mut start = starts;
        let mut exc = |_k: usize, _x: &State, r: &mut SimRng| uniform_in_box(&env.control_bounds, r);
        let d = build_dataset(&env, &cfg, &mut start, &mut exc, &mut rng).unwrap();
        assert_eq!(d.len(), 20);
        for p in &d.points {
            assert_eq!(p.xdot, eval_dynamics(&env, &p.x, &p.u).unwrap());
        }
    }

    #[test]
    fn short_finite_difference_rejected() {
        let env = building::default_spec();
        let cfg = DatasetConfig {
            source: DerivativeSource::FiniteDifference,
            n_rollouts: 1,
            horizon: 2,
            delta_v: 0.0,
        };
        let mut rng = rng_from_seed(5);
        let mut start = starts;
        let mut exc = |_k: usize, _x: &State, _r: &mut SimRng| DVector::zeros(6);
        assert!(build_dataset(&env, &cfg, &mut start, &mut exc, &mut rng).is_err());
    }
}
