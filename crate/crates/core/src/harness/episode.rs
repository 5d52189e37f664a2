//! One configured episode, end to end.

use nalgebra::DVector;

use super::config::ExperimentConfig;
use super::scenario::setup_episode;
use crate::envs::{EnvironmentSpec, Method};
use crate::error::Result;
use crate::math::derive_seed;
use crate::measurement::NoisePattern;
use crate::safety::filter::FilterDiagnostics;
use crate::sim::{run_closed_loop, EpisodeRngs, LoopSettings, Trajectory};

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub trajectory: Trajectory,
    pub measurements: Vec<DVector<f64>>,
    /// Minimum over constraints at every logged state.
    pub constraint_values: Vec<f64>,
    /// Goal distance at every logged state.
    pub goal_distance: Vec<f64>,
    /// First step at which the goal predicate held.
    pub goal_step: Option<usize>,
    pub success: bool,
    pub violation: bool,
    pub clamp_events: usize,
    pub filter_diagnostics: Vec<FilterDiagnostics>,
    /// Coordinates used for path length.
    pub path_coords: Vec<usize>,
}

impl EpisodeRecord {
    pub fn infeasible_steps(&self) -> usize {
        self.filter_diagnostics.iter().filter(|d| !d.feasible).count()
    }
}

/// Per-episode seed shared across ablation rows.
pub fn episode_seed(cfg: &ExperimentConfig, index: usize) -> u64 {
    derive_seed(cfg.seed, &cfg.config_id, index as u64)
}

/// Goal predicate, honoring a configured tolerance override.
pub fn goal_reached(env: &EnvironmentSpec, cfg: &ExperimentConfig, x: &DVector<f64>) -> bool {
    match cfg.success.and_then(|s| s.goal_tol) {
        Some(tol) => env.goal.distance(x) <= tol,
        None => env.goal.reached(x),
    }
}

pub fn run_episode(cfg: &ExperimentConfig, pattern: &NoisePattern, index: usize) -> Result<EpisodeRecord> {
    let mut rngs = EpisodeRngs::from_seed(episode_seed(cfg, index));
    let mut setup = setup_episode(cfg, pattern, &mut rngs.setup)?;
    let settings = LoopSettings {
        method: Method::Rk4,
        delta_w: cfg.delta_w,
        estimator: cfg.controller.estimator,
    };
    let env = &setup.env;
    let out = run_closed_loop(
        env,
        setup.controller.as_mut(),
        &setup.x0,
        cfg.horizon,
        &settings,
        &mut setup.measurement,
        &mut rngs,
    )?;
    let diagnostics = setup.controller.take_diagnostics();
    let states = &out.trajectory.states;
    let constraint_values: Vec<f64> = states.iter().map(|x| env.constraints.min_value(x)).collect();
    let goal_distance: Vec<f64> = states.iter().map(|x| env.goal.distance(x)).collect();
    let goal_step = states.iter().position(|x| goal_reached(env, cfg, x));
    let violation = constraint_values.iter().any(|b| *b < 0.0);
    let margin = cfg.success.map(|s| s.required_margin).unwrap_or(0.0);
    let min_b = constraint_values.iter().copied().fold(f64::INFINITY, f64::min);
    let success = goal_step.is_some() && !violation && min_b >= margin;
    Ok(EpisodeRecord {
        episode: index,
        clamp_events: out.trajectory.clamp_events(),
        measurements: out.measurements,
        trajectory: out.trajectory,
        constraint_values,
        goal_distance,
        goal_step,
        success,
        violation,
        filter_diagnostics: diagnostics,
        path_coords: env.path_coords.clone(),
    })
}

/// Runs `cfg.n_episodes` episodes in parallel, returned in index order.
pub fn run_episodes(cfg: &ExperimentConfig, pattern: &NoisePattern) -> Result<Vec<EpisodeRecord>> {
    use rayon::prelude::*;
    (0..cfg.n_episodes)
        .into_par_iter()
        .map(|i| run_episode(cfg, pattern, i))
        .collect()
}
