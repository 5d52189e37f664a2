//! Closed-loop simulation: controller, measurement layer, state estimator.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::envs::{integrate_step, EnvironmentSpec, Method, ProcessNoise};
use crate::error::{contract, Error, Result};
use crate::math::{derive_seed, rng_from_seed, SimRng, State};
use crate::measurement::MeasurementModel;
use crate::safety::filter::FilterDiagnostics;

/// What a controller sees at step `step`.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub step: usize,
    pub t: f64,
    /// A priori state estimate (the true state in analysis mode).
    pub x_est: &'a DVector<f64>,
    pub y: &'a DVector<f64>,
}

pub trait Controller: Send {
    fn control(&mut self, obs: &Observation<'_>) -> DVector<f64>;
    /// Per-step filter diagnostics accumulated since the last call.
    fn take_diagnostics(&mut self) -> Vec<FilterDiagnostics> {
        Vec::new()
    }
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn control(&mut self, obs: &Observation<'_>) -> DVector<f64> {
        (**self).control(obs)
    }
    fn take_diagnostics(&mut self) -> Vec<FilterDiagnostics> {
        (**self).take_diagnostics()
    }
}

/// Adapts a closure into a [`Controller`].
pub struct FnController<F>(pub F);

impl<F> Controller for FnController<F>
where
    F: FnMut(&Observation<'_>) -> DVector<f64> + Send,
{
    fn control(&mut self, obs: &Observation<'_>) -> DVector<f64> {
        (self.0)(obs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorMode {
    /// Analysis mode: the controller receives the simulator state.
    Truth,
    /// Deployment mode: `x̂⁺ = x̂ + gain·H⁺(y − h(x̂))`, then an Euler prediction.
    Observer { gain: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controls: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    /// One flag per control: whether clamping changed it.
    pub clamped: Vec<bool>,
}

impl Trajectory {
    pub fn clamp_events(&self) -> usize {
        self.clamped.iter().filter(|c| **c).count()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Independent random streams of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeRngs {
    pub setup: SimRng,
    pub process: SimRng,
    pub measurement: SimRng,
}

impl EpisodeRngs {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            setup: rng_from_seed(derive_seed(seed, "setup", 0)),
            process: rng_from_seed(derive_seed(seed, "process", 0)),
            measurement: rng_from_seed(derive_seed(seed, "measurement", 0)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopSettings {
    pub method: Method,
    pub delta_w: f64,
    pub estimator: EstimatorMode,
}

impl Default for LoopSettings {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            delta_w: 0.0,
            estimator: EstimatorMode::Truth,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoopOutput {
    pub trajectory: Trajectory,
    /// One measurement per state.
    pub measurements: Vec<DVector<f64>>,
    /// A priori estimates handed to the controller, one per state.
    pub estimates: Vec<DVector<f64>>,
}

fn correct(env: &EnvironmentSpec, x_prior: &State, y: &DVector<f64>, gain: f64) -> State {
    let h = env.measurement.jacobian(x_prior);
    let innov = y - env.measurement.measure(x_prior);
    let pinv = h.pseudo_inverse(1e-12).expect("pseudo-inverse with nonnegative tolerance");
    x_prior + pinv * innov * gain
}

/// Runs `horizon` steps of the closed loop from `x0`.
pub fn run_closed_loop(
    env: &EnvironmentSpec,
    controller: &mut dyn Controller,
    x0: &State,
    horizon: usize,
    settings: &LoopSettings,
    measurement: &mut MeasurementModel,
    rngs: &mut EpisodeRngs,
) -> Result<LoopOutput> {
    if horizon == 0 {
        return Err(contract("horizon must be at least 1"));
    }
    let n = env.state_dim();
    if x0.len() != n {
        return Err(contract(format!("initial state has dimension {}, expected {n}", x0.len())));
    }
    let noise = ProcessNoise {
        delta_w: settings.delta_w,
    };
    let mut traj = Trajectory {
        times: Vec::with_capacity(horizon + 1),
        states: Vec::with_capacity(horizon + 1),
        controls: Vec::with_capacity(horizon),
        disturbances: Vec::with_capacity(horizon),
        clamped: Vec::with_capacity(horizon),
    };
    let mut measurements = Vec::with_capacity(horizon + 1);
    let mut estimates = Vec::with_capacity(horizon + 1);
    let mut x = x0.clone();
    let mut x_prior = x0.clone();
    for k in 0..=horizon {
        let t = k as f64 * env.dt;
        let y = measurement.measure(&x, t, &mut rngs.measurement)?;
        if matches!(settings.estimator, EstimatorMode::Truth) {
            x_prior = x.clone();
        }
        traj.times.push(t);
        traj.states.push(x.clone());
        if k == horizon {
            measurements.push(y);
            estimates.push(x_prior);
            break;
        }
        let obs = Observation {
            step: k,
            t,
            x_est: &x_prior,
            y: &y,
        };
        let raw = controller.control(&obs);
        let est = x_prior.clone();
        if raw.len() != env.control_dim() || raw.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteControl { step: k });
        }
        let (u, clamped) = env.clamp_control(&raw);
        let w = noise.sample(n, &mut rngs.process);
        let next = integrate_step(env, &x, &u, &w, settings.delta_w, settings.method)?;
        if let EstimatorMode::Observer { gain } = settings.estimator {
            let post = correct(env, &x_prior, &y, gain);
            x_prior = &post + env.dynamics.vector_field(&post, &u) * env.dt;
            env.dynamics.project(&mut x_prior);
        }
        measurements.push(y);
        estimates.push(est);
        traj.controls.push(u);
        traj.disturbances.push(w);
        traj.clamped.push(clamped);
        x = next;
    }
    Ok(LoopOutput {
        trajectory: traj,
        measurements,
        estimates,
    })
}

/// Closed loop with the true state and ideal measurements; process noise from `rng`.
pub fn rollout(
    env: &EnvironmentSpec,
    controller: &mut dyn Controller,
    noise: &ProcessNoise,
    x0: &State,
    horizon: usize,
    method: Method,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    let mut meas = MeasurementModel::noiseless(env.measurement.clone());
    let mut rngs = EpisodeRngs {
        setup: rng.clone(),
        process: rng.clone(),
        measurement: rng.clone(),
    };
    let settings = LoopSettings {
        method,
        delta_w: noise.delta_w,
        estimator: EstimatorMode::Truth,
    };
    let out = run_closed_loop(env, controller, x0, horizon, &settings, &mut meas, &mut rngs)?;
    *rng = rngs.process;
    Ok(out.trajectory)
}

/// Open-loop rollout of a fixed control sequence with explicit disturbances.
pub fn open_loop(
    env: &EnvironmentSpec,
    x0: &State,
    controls: &[DVector<f64>],
    disturbances: Option<&[DVector<f64>]>,
    delta_w: f64,
    method: Method,
) -> Result<Vec<State>> {
    let mut xs = Vec::with_capacity(controls.len() + 1);
    xs.push(x0.clone());
    let zero = DVector::zeros(env.state_dim());
    for (k, u) in controls.iter().enumerate() {
        let w = disturbances.map(|d| &d[k]).unwrap_or(&zero);
        let next = integrate_step(env, xs.last().unwrap(), u, w, delta_w, method)?;
        xs.push(next);
    }
    Ok(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::building;

    #[test]
    fn horizon_one_has_two_states() {
        let env = building::default_spec();
        let x0 = DVector::from_vec(vec![22.0, 23.0, 24.0, 40.0, 50.0, 60.0]);
        let mut c = FnController(|_: &Observation<'_>| DVector::zeros(6));
        let mut rng = rng_from_seed(0);
        let tr = rollout(&env, &mut c, &ProcessNoise::none(), &x0, 1, Method::Rk4, &mut rng).unwrap();
        assert_eq!(tr.states.len(), 2);
        assert_eq!(tr.controls.len(), 1);
        assert_eq!(tr.disturbances.len(), 1);
    }

    #[test]
    fn clamping_is_recorded() {
        let env = building::default_spec();
        let x0 = DVector::from_vec(vec![22.0, 23.0, 24.0, 40.0, 50.0, 60.0]);
        let mut c = FnController(|_: &Observation<'_>| DVector::from_element(6, 3.0));
        let mut rng = rng_from_seed(0);
        let tr = rollout(&env, &mut c, &ProcessNoise::none(), &x0, 5, Method::Rk4, &mut rng).unwrap();
        assert_eq!(tr.clamp_events(), 5);
        assert!(tr.controls.iter().all(|u| u.amax() <= 1.0));
    }

    #[test]
    fn non_finite_control_aborts_with_step() {
        let env = building::default_spec();
        let x0 = DVector::from_vec(vec![22.0, 23.0, 24.0, 40.0, 50.0, 60.0]);
        let mut c = FnController(|o: &Observation<'_>| {
            DVector::from_element(6, if o.step == 3 { f64::NAN } else { 0.0 })
        });
        let mut rng = rng_from_seed(0);
        let err = rollout(&env, &mut c, &ProcessNoise::none(), &x0, 10, Method::Rk4, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonFiniteControl { step: 3 }));
    }
}
