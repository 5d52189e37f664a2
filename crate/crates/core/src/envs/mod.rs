//! Control-affine environments and fixed-step integration.
//!
//! Every environment is expressed as `ẋ = f₀(x) + G(x)u + g(x)w` where `g` is
//! a constant diagonal process gain. [`EnvironmentSpec`] bundles the dynamics
//! with step size, control box, declared constraints, measurement map and goal.

pub mod building;
pub mod grid;
pub mod integrator;
pub mod params;
pub mod quadrotor;
pub mod reactor;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, contract, Error, Result};
use crate::math::{random_unit, rotation_angle, State};
use crate::measurement::MeasurementMap;
use crate::safety::barrier::BarrierSet;

/// Drift and control-gain fields of a control-affine system.
pub trait ControlAffine: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// `f₀(x)`.
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `G(x)`, shape `state_dim × control_dim`.
    fn control_gain(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Post-step projection back onto the state manifold. Identity by default.
    fn project(&self, _x: &mut DVector<f64>) {}

    /// `f₀(x) + G(x)u` without any checks.
    fn vector_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.control_gain(x) * u
    }
}

/// Success predicate on the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Goal {
    /// Euclidean distance of `x[coords]` to `target` at most `tol`.
    Region {
        coords: Vec<usize>,
        target: Vec<f64>,
        tol: f64,
    },
    /// `x[coord] ≥ threshold`; distance is the shortfall.
    AtLeast { coord: usize, threshold: f64 },
    /// Position within `tol` of `position` (state coords 0..3) and attitude
    /// within `attitude_tol_deg` of identity (row-major `R` at coords 6..15).
    Pose {
        position: [f64; 3],
        tol: f64,
        attitude_tol_deg: f64,
    },
}

impl Goal {
    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        match self {
            Goal::Region { coords, target, .. } => coords
                .iter()
                .zip(target)
                .map(|(&c, t)| (x[c] - t).powi(2))
                .sum::<f64>()
                .sqrt(),
            Goal::AtLeast { coord, threshold } => (threshold - x[*coord]).max(0.0),
            Goal::Pose { position, .. } => (0..3)
                .map(|i| (x[i] - position[i]).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn reached(&self, x: &DVector<f64>) -> bool {
        match self {
            Goal::Region { tol, .. } => self.distance(x) <= *tol,
            Goal::AtLeast { coord, threshold } => x[*coord] >= *threshold,
            Goal::Pose {
                tol,
                attitude_tol_deg,
                ..
            } => {
                if self.distance(x) > *tol {
                    return false;
                }
                if x.len() < 15 {
                    return true;
                }
                let r = nalgebra::Matrix3::from_row_slice(&x.as_slice()[6..15]);
                rotation_angle(&r).to_degrees() <= *attitude_tol_deg
            }
        }
    }
}

/// A fully specified task: dynamics, constraints, sensing and goal.
#[derive(Clone)]
pub struct EnvironmentSpec {
    pub name: String,
    pub dynamics: Arc<dyn ControlAffine>,
    pub dt: f64,
    pub control_bounds: Vec<(f64, f64)>,
    /// Diagonal of the constant process gain `g(x)`.
    pub process_gain: DVector<f64>,
    /// Declared safe set: `x ∈ S₀` iff every constraint is nonnegative.
    pub constraints: BarrierSet,
    /// Barriers used by the safety filter. Nonnegative certificate values
    /// imply nonnegative constraints.
    pub certificate: BarrierSet,
    pub measurement: Arc<dyn MeasurementMap>,
    pub goal: Goal,
    pub operating_box: Vec<(f64, f64)>,
    /// Coordinates that make up "position" for path-length metrics.
    pub path_coords: Vec<usize>,
    /// Logging interval from the task description, in seconds (metadata only).
    pub log_interval: f64,
}

impl fmt::Debug for EnvironmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnvironmentSpec")
            .field("name", &self.name)
            .field("dt", &self.dt)
            .field("state_dim", &self.state_dim())
            .field("control_dim", &self.control_dim())
            .finish()
    }
}

impl EnvironmentSpec {
    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn clamp_control(&self, u: &DVector<f64>) -> (DVector<f64>, bool) {
        let mut out = u.clone();
        let mut clamped = false;
        for (i, &(lo, hi)) in self.control_bounds.iter().enumerate() {
            let v = u[i].clamp(lo, hi);
            if v != u[i] {
                clamped = true;
            }
            out[i] = v;
        }
        (out, clamped)
    }

    /// `x` lies inside the operating box inflated `factor` times about its center.
    pub fn inside_inflated_box(&self, x: &DVector<f64>, factor: f64) -> bool {
        self.operating_box.iter().enumerate().all(|(i, &(lo, hi))| {
            let c = 0.5 * (lo + hi);
            let r = 0.5 * (hi - lo) * factor;
            x[i] >= c - r && x[i] <= c + r
        })
    }

    fn check_dims(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(contract(format!(
                "{}: state has dimension {}, expected {}",
                self.name,
                x.len(),
                self.state_dim()
            )));
        }
        if u.len() != self.control_dim() {
            return Err(contract(format!(
                "{}: control has dimension {}, expected {}",
                self.name,
                u.len(),
                self.control_dim()
            )));
        }
        Ok(())
    }
}

/// `f₀(x) + G(x)u` with dimension, bound and finiteness checks.
pub fn eval_dynamics(env: &EnvironmentSpec, x: &State, u: &DVector<f64>) -> Result<State> {
    env.check_dims(x, u)?;
    for (i, &(lo, hi)) in env.control_bounds.iter().enumerate() {
        let slack = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        if u[i] < lo - slack || u[i] > hi + slack {
            return Err(contract(format!(
                "{}: control {} = {} outside [{lo}, {hi}]",
                env.name, i, u[i]
            )));
        }
    }
    let d = env.dynamics.vector_field(x, u);
    check_finite(&d, &format!("{} dynamics", env.name))?;
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    #[default]
    Rk4,
}

/// Raw step of `ẋ = f(x,u) + g⊙w` with `w` held over the step. No checks.
pub fn step_unchecked(
    dynamics: &dyn ControlAffine,
    process_gain: &DVector<f64>,
    x: &State,
    u: &DVector<f64>,
    w: &DVector<f64>,
    dt: f64,
    method: Method,
) -> State {
    let pw = process_gain.component_mul(w);
    let f = |z: &State| dynamics.vector_field(z, u) + &pw;
    let mut next = match method {
        Method::Euler => x + f(x) * dt,
        Method::Rk4 => {
            let k1 = f(x);
            let k2 = f(&(x + &k1 * (0.5 * dt)));
            let k3 = f(&(x + &k2 * (0.5 * dt)));
            let k4 = f(&(x + &k3 * dt));
            x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
    };
    dynamics.project(&mut next);
    next
}

/// One integration step with step `env.dt`.
///
/// Fails when `‖w‖ > δ_w` or when the new state leaves the 10× inflated
/// operating box.
pub fn integrate_step(
    env: &EnvironmentSpec,
    x: &State,
    u: &DVector<f64>,
    w: &DVector<f64>,
    delta_w: f64,
    method: Method,
) -> Result<State> {
    integrate_step_dt(env, x, u, w, delta_w, method, env.dt)
}

/// [`integrate_step`] with an explicit step size.
pub fn integrate_step_dt(
    env: &EnvironmentSpec,
    x: &State,
    u: &DVector<f64>,
    w: &DVector<f64>,
    delta_w: f64,
    method: Method,
    dt: f64,
) -> Result<State> {
    env.check_dims(x, u)?;
    if w.len() != env.state_dim() {
        return Err(contract(format!(
            "process noise has dimension {}, expected {}",
            w.len(),
            env.state_dim()
        )));
    }
    let wn = w.norm();
    if wn > delta_w * (1.0 + 1e-12) + 1e-15 {
        return Err(contract(format!(
            "process noise norm {wn} exceeds declared bound {delta_w}"
        )));
    }
    let next = step_unchecked(env.dynamics.as_ref(), &env.process_gain, x, u, w, dt, method);
    check_finite(&next, &format!("{} state", env.name))?;
    if !env.inside_inflated_box(&next, 10.0) {
        return Err(Error::Divergence(format!(
            "{} state left the inflated operating box",
            env.name
        )));
    }
    Ok(next)
}

/// Bounded process-noise sampler: uniform in the ball `‖w‖ ≤ δ_w`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoise {
    pub delta_w: f64,
}

impl ProcessNoise {
    pub fn none() -> Self {
        Self { delta_w: 0.0 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> DVector<f64> {
        if self.delta_w == 0.0 || dim == 0 {
            return DVector::zeros(dim);
        }
        let dir = random_unit(dim, rng);
        let r: f64 = rng.random::<f64>().powf(1.0 / dim as f64);
        dir * (self.delta_w * r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_region_distance() {
        let g = Goal::Region {
            coords: vec![0, 2],
            target: vec![1.0, 1.0],
            tol: 0.5,
        };
        let x = DVector::from_vec(vec![1.3, 9.0, 1.4]);
        assert!((g.distance(&x) - 0.5).abs() < 1e-12);
        assert!(g.reached(&x));
    }

    #[test]
    fn at_least_goal() {
        let g = Goal::AtLeast {
            coord: 1,
            threshold: 0.8,
        };
        assert!(!g.reached(&DVector::from_vec(vec![0.0, 0.5])));
        assert!((g.distance(&DVector::from_vec(vec![0.0, 0.5])) - 0.3).abs() < 1e-12);
        assert!(g.reached(&DVector::from_vec(vec![0.0, 0.8])));
    }

    #[test]
    fn process_noise_stays_in_ball() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = ProcessNoise { delta_w: 0.2 };
        for _ in 0..1000 {
            assert!(n.sample(5, &mut rng).norm() <= 0.2 + 1e-15);
        }
    }
}
