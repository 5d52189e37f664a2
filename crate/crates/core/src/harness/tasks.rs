//! Verification, learning and compatibility runs driven by a configuration.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::{ActionName, EnvName, ExperimentConfig};
use super::episode::{run_episode, run_episodes};
use crate::envs::{building, grid, integrator, quadrotor, reactor, EnvironmentSpec};
use crate::error::{config, Error, Result};
use crate::geometry::{
    check_compatibility, BuildingTemperatureShift, CompatibilityReport, GridPhaseShift, GroupAction, IdentityAction,
};
use crate::learning::{
    build_dataset, convergence_check, fit_gd, Basis, ConvergenceFit, DatasetConfig, DerivativeSource, ErrorProbe, GdConfig,
    LearnedDynamics, TraceRow,
};
use crate::math::{derive_seed, rng_from_seed, uniform_in_box};
use crate::measurement::NoisePattern;
use crate::safety::verify::{verify_safety_mc, EpisodeSafety, VerificationReport, VerifyParams};

/// Default environment for tasks that do not sample per-episode goals.
pub fn base_env(name: EnvName) -> EnvironmentSpec {
    match name {
        EnvName::Building => building::default_spec(),
        EnvName::Reactor => reactor::default_spec(),
        EnvName::Grid => grid::default_spec(),
        EnvName::Quadrotor => quadrotor::default_spec(),
        EnvName::Integrator => integrator::default_spec(),
    }
}

/// Smallest declared-constraint value over nominal noiseless episodes: the
/// margin the certificate keeps from the constraint boundary.
pub fn calibrate_b_min(cfg: &ExperimentConfig, episodes: usize) -> Result<f64> {
    let mut cal = cfg.clone();
    cal.config_id = format!("{}_calibration", cfg.config_id);
    cal.n_episodes = episodes.max(1);
    cal.delta_w = 0.0;
    let records = run_episodes(&cal, &NoisePattern::None)?;
    Ok(records
        .iter()
        .flat_map(|r| r.constraint_values.iter().copied())
        .fold(f64::INFINITY, f64::min))
}

/// One Monte Carlo report per `verify.delta_v` entry, with Gaussian
/// measurement noise of standard deviation `δ_v/3` per channel.
pub fn run_verification(cfg: &ExperimentConfig) -> Result<Vec<VerificationReport>> {
    let v = cfg
        .verify
        .as_ref()
        .ok_or_else(|| config("verify needs a \"verify\" section"))?;
    let b_min = calibrate_b_min(cfg, v.calibration_episodes)?;
    v.delta_v
        .iter()
        .map(|&dv| {
            let pattern = NoisePattern::gaussian(dv / 3.0);
            let source = |i: usize| -> Result<EpisodeSafety> {
                let r = run_episode(cfg, &pattern, i)?;
                Ok(EpisodeSafety {
                    violated: r.violation,
                    min_b0: r.constraint_values.iter().copied().fold(f64::INFINITY, f64::min),
                    infeasible_steps: r.infeasible_steps(),
                })
            };
            verify_safety_mc(
                &source,
                &VerifyParams {
                    n_episodes: cfg.n_episodes,
                    horizon: cfg.horizon,
                    delta_v: dv,
                    delta_w: cfg.delta_w,
                    b_min,
                    l_b: cfg.controller.l_b,
                    kappa: cfg.controller.kappa,
                },
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnOutcome {
    pub model: LearnedDynamics,
    pub trace: Vec<TraceRow>,
    pub final_loss: f64,
    pub final_error_sup: f64,
    /// Fit of the sup-norm error trace; `None` with `fit_error` set when rejected.
    pub convergence: Option<ConvergenceFit>,
    pub fit_error: Option<String>,
}

/// Rollouts from uniform starts in the operating box under uniformly random
/// controls (redrawn every step for derivative queries, once per rollout for
/// finite differences), then gradient descent tracked on a fixed probe set.
pub fn run_learning(cfg: &ExperimentConfig) -> Result<LearnOutcome> {
    let l = cfg.learn.ok_or_else(|| config("learn needs a \"learn\" section"))?;
    let env = base_env(cfg.env);
    let ds_cfg = DatasetConfig {
        source: l.source,
        n_rollouts: l.n_rollouts,
        horizon: l.rollout_horizon,
        delta_v: l.delta_v,
    };
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &cfg.config_id, 0));
    let bounds = env.operating_box.clone();
    let ubounds = env.control_bounds.clone();
    // Central differences need the control held across neighbouring steps.
    let hold = l.source == DerivativeSource::FiniteDifference;
    let mut current = DVector::zeros(env.control_dim());
    let data = build_dataset(
        &env,
        &ds_cfg,
        &mut |r| uniform_in_box(&bounds, r),
        &mut |k, _, r| {
            if k == 0 || !hold {
                current = uniform_in_box(&ubounds, r);
            }
            current.clone()
        },
        &mut rng,
    )?;
    let basis = Basis::for_box(l.degree, &env.operating_box, env.control_dim())?;
    let mut probe_rng = rng_from_seed(derive_seed(cfg.seed, "probe", 0));
    let probe = ErrorProbe::sample(&env, l.probe_samples, &mut probe_rng);
    let gd = GdConfig {
        lambda: None,
        lambda_scale: l.lambda_scale,
        steps: l.steps,
        tol: 0.0,
    };
    let (model, trace) = fit_gd(&data, &basis, &gd, Some(&probe))?;
    let sup: Vec<f64> = trace.iter().filter_map(|t| t.model_error_sup).collect();
    let (convergence, fit_error) = match convergence_check(&sup, l.delta_v) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let last = trace.last().copied();
    Ok(LearnOutcome {
        model,
        final_loss: last.map(|t| t.loss).unwrap_or(f64::NAN),
        final_error_sup: sup.last().copied().unwrap_or(f64::NAN),
        trace,
        convergence,
        fit_error,
    })
}

pub fn action_for(cfg: &ExperimentConfig, name: ActionName) -> Result<Box<dyn GroupAction>> {
    let mismatch = |want: &str| config(format!("action {name:?} needs env {want}, config has {}", cfg.env.as_str()));
    Ok(match name {
        ActionName::Identity => Box::new(IdentityAction),
        ActionName::GridPhaseShift => {
            if cfg.env != EnvName::Grid {
                return Err(mismatch("grid"));
            }
            Box::new(GridPhaseShift {
                n_nodes: grid::default_file().params.n_nodes,
                range: 1.0,
            })
        }
        ActionName::BuildingTemperatureShift | ActionName::BuildingTemperatureShiftBroken => {
            if cfg.env != EnvName::Building {
                return Err(mismatch("building"));
            }
            let p = building::default_file().params;
            if name == ActionName::BuildingTemperatureShift {
                Box::new(BuildingTemperatureShift::new(p, 2.0))
            } else {
                Box::new(BuildingTemperatureShift::broken(p, 2.0))
            }
        }
    })
}

pub fn run_compatibility(cfg: &ExperimentConfig) -> Result<CompatibilityReport> {
    let c = cfg.compat.ok_or_else(|| config("compat needs a \"compat\" section"))?;
    let action = action_for(cfg, c.action)?;
    let env = base_env(cfg.env);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "compat", 0));
    check_compatibility(&env, action.as_ref(), c.n_samples, &mut rng).map_err(|e| match e {
        Error::Contract(m) => config(m),
        other => other,
    })
}
