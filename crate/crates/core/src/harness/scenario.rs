//! Per-environment episode setup: start/goal sampling and nominal controllers.

use nalgebra::{DVector, Vector3};
use rand::Rng;

use super::config::{EnvName, ExperimentConfig, Nominal};
use crate::envs::quadrotor::{self, AttitudeController, QuadrotorFile};
use crate::envs::{building, grid, integrator, reactor, EnvironmentSpec};
use crate::error::{config, Result};
use crate::math::{uniform_in_box, SimRng, State};
use crate::measurement::{MeasurementModel, NoisePattern};
use crate::safety::filter::{safety_filter, FilterDiagnostics, FilteredController, Mcbf};
use crate::sim::{Controller, FnController, Observation};

/// Everything needed to run one episode.
pub struct EpisodeSetup {
    pub env: EnvironmentSpec,
    pub x0: State,
    pub controller: Box<dyn Controller>,
    pub measurement: MeasurementModel,
}

fn boxed<F>(f: F) -> Box<dyn Controller>
where
    F: FnMut(&Observation<'_>) -> DVector<f64> + Send + 'static,
{
    Box::new(FnController(f))
}

fn clamp_to(env: &EnvironmentSpec, u: DVector<f64>) -> DVector<f64> {
    env.clamp_control(&u).0
}

/// Builds the environment, start state and (optionally filtered) controller.
pub fn setup_episode(cfg: &ExperimentConfig, pattern: &NoisePattern, rng: &mut SimRng) -> Result<EpisodeSetup> {
    let c = &cfg.controller;
    let (env, x0, nominal, quad) = match cfg.env {
        EnvName::Building => building_setup(c.nominal, rng)?,
        EnvName::Reactor => reactor_setup(c.nominal, rng)?,
        EnvName::Grid => grid_setup(c.nominal, rng)?,
        EnvName::Integrator => integrator_setup(c.nominal, rng)?,
        EnvName::Quadrotor => {
            if !matches!(c.estimator, crate::sim::EstimatorMode::Truth) {
                return Err(config("quadrotor episodes use the true state; set estimator to truth"));
            }
            let (env, x0, cascade) = quadrotor_setup(cfg, rng)?;
            (env, x0, Box::new(cascade) as Box<dyn Controller>, true)
        }
    };
    let controller: Box<dyn Controller> = if c.filter && !quad {
        let mcbf = Mcbf::for_env(&env, c.l_b, c.kappa);
        Box::new(FilteredController::new(nominal, env.clone(), mcbf, cfg.delta_w))
    } else {
        nominal
    };
    let measurement = MeasurementModel::new(env.measurement.clone(), pattern.clone())?;
    Ok(EpisodeSetup {
        env,
        x0,
        controller,
        measurement,
    })
}

type Built = (EnvironmentSpec, State, Box<dyn Controller>, bool);

fn building_setup(nominal: Nominal, rng: &mut SimRng) -> Result<Built> {
    let file = building::default_file();
    let n = file.params.n_zones;
    let range = match &file.goal {
        crate::envs::params::GoalSpec::Region { target_range, .. } => *target_range,
        _ => return Err(config("building: goal must be a region")),
    };
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(range[0]..=range[1])).collect();
    let env = building::spec(&file, &targets)?;
    let x0 = uniform_in_box(&building::BuildingFile::bounds(&file.start_box), rng);
    let h_mid = 50.0;
    let e = env.clone();
    let ctrl = match nominal {
        Nominal::Zero => boxed(move |_| DVector::zeros(2 * n)),
        Nominal::Competent | Nominal::Aggressive => {
            let setpoint: Vec<f64> = if nominal == Nominal::Aggressive {
                vec![28.0; n]
            } else {
                targets
            };
            boxed(move |o| {
                let x = o.x_est;
                let u = DVector::from_fn(2 * n, |i, _| {
                    if i < n {
                        2.0 * (setpoint[i] - x[i])
                    } else {
                        0.2 * (h_mid - x[i])
                    }
                });
                clamp_to(&e, u)
            })
        }
    };
    Ok((env, x0, ctrl, false))
}

fn reactor_setup(nominal: Nominal, rng: &mut SimRng) -> Result<Built> {
    let file = reactor::default_file();
    let env = reactor::spec(&file)?;
    let x0 = uniform_in_box(&reactor::ReactorFile::bounds(&file.start_box), rng);
    let e = env.clone();
    let ctrl = match nominal {
        Nominal::Zero => boxed(|_| DVector::zeros(2)),
        Nominal::Competent => boxed(move |o| {
            let t = o.x_est[0];
            clamp_to(&e, DVector::from_vec(vec![75.0 + 5.0 * (75.0 - t), 0.0]))
        }),
        // Hottest coolant and full feed: fresh reactant sustains the exotherm.
        Nominal::Aggressive => boxed(|_| DVector::from_vec(vec![80.0, 0.5])),
    };
    Ok((env, x0, ctrl, false))
}

fn grid_setup(nominal: Nominal, rng: &mut SimRng) -> Result<Built> {
    let file = grid::default_file();
    let n = file.params.n_nodes;
    let env = grid::spec(&file)?;
    let x0 = uniform_in_box(&grid::GridFile::bounds(&file.start_box), rng);
    let e = env.clone();
    let ctrl = match nominal {
        Nominal::Zero => boxed(move |_| DVector::zeros(n)),
        Nominal::Competent => boxed(move |o| {
            let x = o.x_est;
            clamp_to(&e, DVector::from_fn(n, |i, _| -2.0 * x[n + i]))
        }),
        // Constant generation ramp.
        Nominal::Aggressive => boxed(move |_| DVector::from_element(n, 2.0)),
    };
    Ok((env, x0, ctrl, false))
}

fn integrator_setup(nominal: Nominal, rng: &mut SimRng) -> Result<Built> {
    let file = integrator::default_file();
    let env = integrator::spec(&file)?;
    let x0 = uniform_in_box(&integrator::IntegratorFile::bounds(&file.start_box), rng);
    let target = match &env.goal {
        crate::envs::Goal::Region { target, .. } => target[0],
        _ => 0.0,
    };
    let e = env.clone();
    let ctrl = match nominal {
        Nominal::Zero => boxed(|_| DVector::zeros(1)),
        Nominal::Competent => boxed(move |o| clamp_to(&e, DVector::from_element(1, 2.0 * (target - o.x_est[0])))),
        Nominal::Aggressive => boxed(|_| DVector::from_element(1, 1.0)),
    };
    Ok((env, x0, ctrl, false))
}

/// Start, goal and obstacles of one navigation episode.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadLayout {
    pub start: Vector3<f64>,
    pub goal: Vector3<f64>,
    pub obstacles: Vec<Vector3<f64>>,
}

/// Start near the ground, goal 0.5–0.7 m up within 0.5 m horizontally, one
/// obstacle near the straight path and one elsewhere in the workspace.
pub fn sample_quad_layout(file: &QuadrotorFile, rng: &mut SimRng) -> Result<QuadLayout> {
    let clear = crate::envs::quadrotor::clearance_radius(file)? + 0.05;
    for _ in 0..1000 {
        let start = Vector3::new(
            rng.random_range(-0.5..=0.5),
            rng.random_range(-0.5..=0.5),
            rng.random_range(0.05..=0.15),
        );
        let r = 0.5 * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let goal = Vector3::new(start.x + r * phi.cos(), start.y + r * phi.sin(), rng.random_range(0.5..=0.7));
        let s = rng.random_range(0.35..=0.65);
        let jitter = Vector3::new(
            rng.random_range(-0.03..=0.03),
            rng.random_range(-0.03..=0.03),
            rng.random_range(-0.03..=0.03),
        );
        let on_path = start + (goal - start) * s + jitter;
        let other = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(0.2..=1.0),
        );
        let obstacles = vec![on_path, other];
        let ok = obstacles
            .iter()
            .all(|o| (o - start).norm() >= clear && (o - goal).norm() >= clear);
        if ok {
            return Ok(QuadLayout { start, goal, obstacles });
        }
    }
    Err(config("quadrotor: no admissible start/goal/obstacle layout after 1000 attempts"))
}

/// Position loop with an optional point-mass safety filter feeding a
/// geometric attitude controller.
pub struct QuadCascade {
    pub attitude: AttitudeController,
    pub goal: Vector3<f64>,
    pub kp: f64,
    pub kd: f64,
    pub accel_limit: f64,
    pub u_max: f64,
    /// Point-mass environment and certificate for the filter.
    pub filter: Option<(EnvironmentSpec, Mcbf)>,
    pub delta_w: f64,
    diagnostics: Vec<FilterDiagnostics>,
}

impl QuadCascade {
    pub fn nominal_accel(&self, p: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
        let a = (self.goal - p) * self.kp - v * self.kd;
        let lim = self.accel_limit;
        a.map(|c| c.clamp(-lim, lim))
    }
}

impl Controller for QuadCascade {
    fn control(&mut self, obs: &Observation<'_>) -> DVector<f64> {
        let x = obs.x_est;
        let p = Vector3::new(x[0], x[1], x[2]);
        let v = Vector3::new(x[3], x[4], x[5]);
        let mut a = self.nominal_accel(&p, &v);
        if let Some((env, mcbf)) = &self.filter {
            let z = DVector::from_iterator(6, x.iter().take(6).copied());
            let a_nom = DVector::from_column_slice(a.as_slice());
            let (af, d) = safety_filter(env, mcbf, &z, obs.y, &a_nom, self.delta_w);
            self.diagnostics.push(d);
            a = Vector3::new(af[0], af[1], af[2]);
        }
        self.attitude.command(x, &a, self.u_max)
    }

    fn take_diagnostics(&mut self) -> Vec<FilterDiagnostics> {
        std::mem::take(&mut self.diagnostics)
    }
}

fn quadrotor_setup(cfg: &ExperimentConfig, rng: &mut SimRng) -> Result<(EnvironmentSpec, State, QuadCascade)> {
    let file = quadrotor::default_file();
    let layout = sample_quad_layout(&file, rng)?;
    let env = quadrotor::spec(&file, &layout.obstacles, layout.goal)?;
    let x0 = quadrotor::Quadrotor::state_at(layout.start);
    let c = &cfg.controller;
    let filter = if c.filter {
        let tenv = quadrotor::translational_spec(&file, &layout.obstacles, layout.goal)?;
        let mcbf = Mcbf::for_env(&tenv, c.l_b, c.kappa);
        Some((tenv, mcbf))
    } else {
        None
    };
    let (kp, kd) = match c.nominal {
        Nominal::Competent => (4.0, 3.0),
        Nominal::Aggressive => (12.0, 5.0),
        Nominal::Zero => (0.0, 0.0),
    };
    let u_max = env.control_bounds[0].1;
    let cascade = QuadCascade {
        attitude: AttitudeController::new(file.params.clone()),
        goal: layout.goal,
        kp,
        kd,
        accel_limit: file.params.accel_limit,
        u_max,
        filter,
        delta_w: cfg.delta_w,
        diagnostics: Vec::new(),
    };
    Ok((env, x0, cascade))
}
