//! Safety-constrained policy search over linear feedback.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvironmentSpec, Method};
use crate::error::{contract, Error, Result};
use crate::math::{derive_seed, SimRng, State};
use crate::measurement::MeasurementModel;
use crate::safety::filter::{FilteredController, Mcbf};
use crate::sim::{run_closed_loop, Controller, EpisodeRngs, LoopSettings, Observation};

/// `π(x) = K x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub gains: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl PolicyParams {
    pub fn zeros(control_dim: usize, state_dim: usize) -> Self {
        Self {
            gains: DMatrix::zeros(control_dim, state_dim),
            bias: DVector::zeros(control_dim),
        }
    }

    pub fn control(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gains * x + &self.bias
    }

    fn flatten(&self) -> Vec<f64> {
        self.gains.iter().chain(self.bias.iter()).copied().collect()
    }

    fn unflatten(&self, v: &[f64]) -> Self {
        let (m, n) = self.gains.shape();
        Self {
            gains: DMatrix::from_column_slice(m, n, &v[..m * n]),
            bias: DVector::from_column_slice(&v[m * n..]),
        }
    }
}

impl Controller for PolicyParams {
    fn control(&mut self, obs: &Observation<'_>) -> DVector<f64> {
        PolicyParams::control(self, obs.x_est)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub iters: usize,
    pub fd_step: f64,
    pub step_size: f64,
    pub discount: f64,
    pub horizon: usize,
    pub n_rollouts: usize,
    pub delta_w: f64,
    pub seed: u64,
}

/// Outcome of one batch of rollouts at fixed parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyEvaluation {
    pub cost: f64,
    /// Rollouts with at least one infeasible filter step.
    pub infeasible_rollouts: usize,
    pub min_b0: f64,
}

/// Result of [`optimize_policy`].
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutcome {
    pub params: PolicyParams,
    pub cost: f64,
    /// Cost at the center point of every iteration, starting with `policy0`.
    pub history: Vec<f64>,
}

pub type StageCost = dyn Fn(&State, &DVector<f64>) -> f64 + Sync;
pub type StartSampler = dyn Fn(&mut SimRng) -> State + Sync;

/// Discounted cost averaged over `cfg.n_rollouts` seeded rollouts, each
/// composed with the safety filter when `mcbf` is given.
pub fn evaluate_policy(
    env: &EnvironmentSpec,
    params: &PolicyParams,
    cost: &StageCost,
    mcbf: Option<&Mcbf>,
    start: &StartSampler,
    cfg: &PolicyConfig,
) -> Result<PolicyEvaluation> {
    let runs: Vec<(f64, bool, f64)> = (0..cfg.n_rollouts)
        .into_par_iter()
        .map(|r| {
            let mut rngs = EpisodeRngs::from_seed(derive_seed(cfg.seed, "policy_rollout", r as u64));
            let x0 = start(&mut rngs.setup);
            let mut meas = MeasurementModel::noiseless(env.measurement.clone());
            let settings = LoopSettings {
                method: Method::Rk4,
                delta_w: cfg.delta_w,
                ..LoopSettings::default()
            };
            let (out, infeasible) = match mcbf {
                Some(m) => {
                    let mut c = FilteredController::new(params.clone(), env.clone(), m.clone(), cfg.delta_w);
                    let out = run_closed_loop(env, &mut c, &x0, cfg.horizon, &settings, &mut meas, &mut rngs)?;
                    (out, c.take_diagnostics().iter().any(|d| !d.feasible))
                }
                None => {
                    let mut c = params.clone();
                    (run_closed_loop(env, &mut c, &x0, cfg.horizon, &settings, &mut meas, &mut rngs)?, false)
                }
            };
            let tr = &out.trajectory;
            let mut j = 0.0;
            let mut disc = 1.0;
            for (x, u) in tr.states.iter().zip(&tr.controls) {
                j += disc * cost(x, u);
                disc *= cfg.discount;
            }
            let min_b0 = tr
                .states
                .iter()
                .map(|x| env.constraints.min_value(x))
                .fold(f64::INFINITY, f64::min);
            Ok((j, infeasible, min_b0))
        })
        .collect::<Result<_>>()?;
    let n = runs.len().max(1) as f64;
    Ok(PolicyEvaluation {
        cost: runs.iter().map(|r| r.0).sum::<f64>() / n,
        infeasible_rollouts: runs.iter().filter(|r| r.1).count(),
        min_b0: runs.iter().map(|r| r.2).fold(f64::INFINITY, f64::min),
    })
}

/// Central-difference gradient descent with common random numbers.
///
/// Every evaluated policy runs through the safety filter, which keeps all
/// iterates inside the safe set; the best feasible center point is returned.
pub fn optimize_policy(
    env: &EnvironmentSpec,
    policy0: &PolicyParams,
    cost: &StageCost,
    mcbf: Option<&Mcbf>,
    start: &StartSampler,
    cfg: &PolicyConfig,
) -> Result<PolicyOutcome> {
    if !(cfg.discount > 0.0 && cfg.discount < 1.0) {
        return Err(contract(format!("discount must lie in (0, 1), got {}", cfg.discount)));
    }
    if cfg.n_rollouts == 0 || cfg.horizon == 0 {
        return Err(contract("policy search needs rollouts and a positive horizon"));
    }
    let mut theta = policy0.flatten();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut history = Vec::with_capacity(cfg.iters + 1);
    let eval = |v: &[f64]| evaluate_policy(env, &policy0.unflatten(v), cost, mcbf, start, cfg);
    for it in 0..=cfg.iters {
        let center = eval(&theta)?;
        history.push(center.cost);
        if center.infeasible_rollouts == cfg.n_rollouts && mcbf.is_some() {
            return Err(Error::Optimization {
                reason: format!("filter infeasible in every rollout at iteration {it}"),
                trace: history,
            });
        }
        if center.infeasible_rollouts == 0 && best.as_ref().is_none_or(|b| center.cost < b.0) {
            best = Some((center.cost, theta.clone()));
        }
        if it == cfg.iters {
            break;
        }
        let mut grad = vec![0.0; theta.len()];
        for j in 0..theta.len() {
            let mut up = theta.clone();
            up[j] += cfg.fd_step;
            let mut dn = theta.clone();
            dn[j] -= cfg.fd_step;
            grad[j] = (eval(&up)?.cost - eval(&dn)?.cost) / (2.0 * cfg.fd_step);
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= cfg.step_size * g;
        }
    }
    let (cost_best, theta_best) = best.ok_or_else(|| Error::Optimization {
        reason: "no iterate was filter-feasible in every rollout".into(),
        trace: history.clone(),
    })?;
    Ok(PolicyOutcome {
        params: policy0.unflatten(&theta_best),
        cost: cost_best,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::integrator;
    use rand::Rng;

    #[test]
    fn zero_cost_leaves_parameters() {
        let env = integrator::default_spec();
        let p0 = PolicyParams {
            gains: DMatrix::from_element(1, 1, -0.7),
            bias: DVector::from_element(1, 0.1),
        };
        let cfg = PolicyConfig {
            iters: 3,
            fd_step: 1e-3,
            step_size: 0.5,
            discount: 0.9,
            horizon: 20,
            n_rollouts: 4,
            delta_w: 0.0,
            seed: 1,
        };
        let mcbf = Mcbf::for_env(&env, 0.0, 1.0);
        let start = |r: &mut SimRng| DVector::from_element(1, r.random_range(-0.3..0.3));
        let out = optimize_policy(&env, &p0, &|_, _| 0.0, Some(&mcbf), &start, &cfg).unwrap();
        assert_eq!(out.params, p0);
    }
}
