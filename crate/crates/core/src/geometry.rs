//! Uncertainty tubes, Lipschitz estimation, margin decomposition and
//! group-action compatibility.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::building::{Building, BuildingParams};
use crate::envs::{ControlAffine, EnvironmentSpec};
use crate::error::{config, contract, Result};
use crate::math::{jacobian_fd, spectral_norm, uniform_in_box, SimRng, State};

/// Worst-case deviation envelope between a disturbed and a nominal trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyTube {
    pub l_f: f64,
    pub l_g: f64,
    pub delta_w: f64,
}

impl UncertaintyTube {
    pub fn new(l_f: f64, l_g: f64, delta_w: f64) -> Result<Self> {
        if !(l_f > 0.0 && l_g >= 0.0 && delta_w >= 0.0) {
            return Err(contract(format!(
                "tube needs L_f > 0, L_g ≥ 0, δ_w ≥ 0; got {l_f}, {l_g}, {delta_w}"
            )));
        }
        Ok(Self { l_f, l_g, delta_w })
    }

    /// `(L_g δ_w / L_f)(e^{L_f t} − 1)`.
    pub fn radius(&self, t: f64) -> f64 {
        assert!(t >= 0.0, "tube radius needs t ≥ 0");
        self.l_g * self.delta_w / self.l_f * (self.l_f * t).exp_m1()
    }

    /// Barrier-value envelope `L_b·radius(t_ref)`.
    pub fn gamma_b(&self, l_b: f64, t_ref: f64) -> f64 {
        l_b * self.radius(t_ref)
    }
}

/// `b_min − L_b‖v‖ − γ_b`.
pub fn safety_margin_lower_bound(b_min: f64, l_b: f64, v_norm: f64, gamma_b: f64) -> f64 {
    b_min - l_b * v_norm - gamma_b
}

/// Sampled Lipschitz constant of `x ↦ f(x, u)` on the operating box, inflated 1.1×.
///
/// Takes the larger of random pair quotients and the spectral norm of the
/// finite-difference Jacobian at each sample; the Jacobian term keeps the
/// estimate from undershooting on linear systems.
pub fn estimate_lipschitz(env: &EnvironmentSpec, u: &DVector<f64>, n_samples: usize, rng: &mut SimRng) -> Result<f64> {
    if n_samples < 100 {
        return Err(contract("estimate_lipschitz needs at least 100 samples"));
    }
    if env.operating_box.iter().any(|&(lo, hi)| !(hi > lo)) {
        return Err(config(format!("{}: operating box has zero volume", env.name)));
    }
    let f = |x: &DVector<f64>| env.dynamics.vector_field(x, u);
    let mut l: f64 = 0.0;
    for _ in 0..n_samples {
        let x1 = uniform_in_box(&env.operating_box, rng);
        let x2 = uniform_in_box(&env.operating_box, rng);
        let dx = (&x1 - &x2).norm();
        if dx > 0.0 {
            l = l.max((f(&x1) - f(&x2)).norm() / dx);
        }
        l = l.max(spectral_norm(&jacobian_fd(f, &x1, 1e-6)));
    }
    Ok(1.1 * l)
}

/// `L_g = max |gᵢ|` for the constant diagonal process gain.
pub fn process_gain_bound(env: &EnvironmentSpec) -> f64 {
    env.process_gain.amax()
}

/// A one-parameter group acting on states and measurements.
pub trait GroupAction: Send + Sync {
    fn name(&self) -> &str;
    fn sample_param(&self, rng: &mut SimRng) -> f64;
    fn act_state(&self, g: f64, x: &State) -> State;
    fn act_measurement(&self, g: f64, y: &DVector<f64>) -> DVector<f64>;
    /// Dynamics of the acted system. Actions that also move environment
    /// parameters (for example the ambient temperature) override this.
    fn acted_dynamics(&self, _g: f64, env: &EnvironmentSpec) -> Arc<dyn ControlAffine> {
        env.dynamics.clone()
    }
}

pub struct IdentityAction;

impl GroupAction for IdentityAction {
    fn name(&self) -> &str {
        "identity"
    }
    fn sample_param(&self, _rng: &mut SimRng) -> f64 {
        0.0
    }
    fn act_state(&self, _g: f64, x: &State) -> State {
        x.clone()
    }
    fn act_measurement(&self, _g: f64, y: &DVector<f64>) -> DVector<f64> {
        y.clone()
    }
}

/// Uniform phase shift `Δθᵢ → Δθᵢ + c` on the ring grid; measurements unchanged.
pub struct GridPhaseShift {
    pub n_nodes: usize,
    pub range: f64,
}

impl GroupAction for GridPhaseShift {
    fn name(&self) -> &str {
        "grid_phase_shift"
    }
    fn sample_param(&self, rng: &mut SimRng) -> f64 {
        rng.random_range(-self.range..=self.range)
    }
    fn act_state(&self, g: f64, x: &State) -> State {
        let mut z = x.clone();
        for i in 0..self.n_nodes {
            z[2 * self.n_nodes + i] += g;
        }
        z
    }
    fn act_measurement(&self, _g: f64, y: &DVector<f64>) -> DVector<f64> {
        y.clone()
    }
}

/// Shift of all zone temperatures and the ambient temperature by `c`.
///
/// With `shift_measurement = false` the measured temperatures are left
/// untouched, which breaks compatibility with the identity sensor.
pub struct BuildingTemperatureShift {
    pub params: BuildingParams,
    pub range: f64,
    pub shift_measurement: bool,
}

impl BuildingTemperatureShift {
    pub fn new(params: BuildingParams, range: f64) -> Self {
        Self {
            params,
            range,
            shift_measurement: true,
        }
    }

    /// State shift without the matching measurement shift.
    pub fn broken(params: BuildingParams, range: f64) -> Self {
        Self {
            params,
            range,
            shift_measurement: false,
        }
    }
}

impl GroupAction for BuildingTemperatureShift {
    fn name(&self) -> &str {
        if self.shift_measurement {
            "building_temperature_shift"
        } else {
            "building_temperature_shift_broken"
        }
    }
    fn sample_param(&self, rng: &mut SimRng) -> f64 {
        let c: f64 = rng.random_range(0.1 * self.range..=self.range);
        if rng.random::<bool>() {
            c
        } else {
            -c
        }
    }
    fn act_state(&self, g: f64, x: &State) -> State {
        let mut z = x.clone();
        for i in 0..self.params.n_zones {
            z[i] += g;
        }
        z
    }
    fn act_measurement(&self, g: f64, y: &DVector<f64>) -> DVector<f64> {
        if self.shift_measurement {
            self.act_state(g, y)
        } else {
            y.clone()
        }
    }
    fn acted_dynamics(&self, g: f64, _env: &EnvironmentSpec) -> Arc<dyn ControlAffine> {
        let mut p = self.params.clone();
        p.t_amb += g;
        Arc::new(Building::new(p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub action_name: String,
    pub n_samples: usize,
    pub residual1_max: f64,
    pub residual1_mean: f64,
    pub residual2_max: f64,
    pub residual2_mean: f64,
    pub skipped: usize,
}

/// Checks `f(Ψ(g,x),u) = dΨ f(x,u)` and `h(Ψ(g,x)) = Ψ_y(g, h(x))` on random samples.
pub fn check_compatibility(
    env: &EnvironmentSpec,
    action: &dyn GroupAction,
    n_samples: usize,
    rng: &mut SimRng,
) -> Result<CompatibilityReport> {
    check_compatibility_with_step(env, action, n_samples, 1e-5, rng)
}

/// [`check_compatibility`] with an explicit differencing step for `dΨ`.
pub fn check_compatibility_with_step(
    env: &EnvironmentSpec,
    action: &dyn GroupAction,
    n_samples: usize,
    step: f64,
    rng: &mut SimRng,
) -> Result<CompatibilityReport> {
    if n_samples < 10 {
        return Err(contract("check_compatibility needs at least 10 samples"));
    }
    let map = env.measurement.as_ref();
    let (mut r1max, mut r1sum, mut r2max, mut r2sum) = (0.0f64, 0.0, 0.0f64, 0.0);
    let mut skipped = 0;
    for _ in 0..n_samples {
        let g = action.sample_param(rng);
        let x = uniform_in_box(&env.operating_box, rng);
        let u = uniform_in_box(&env.control_bounds, rng);
        let gx = action.act_state(g, &x);
        if !env.inside_inflated_box(&gx, 10.0) {
            skipped += 1;
            continue;
        }
        let acted = action.acted_dynamics(g, env);
        let dpsi = jacobian_fd(|z| action.act_state(g, z), &x, step);
        let r1 = (acted.vector_field(&gx, &u) - dpsi * env.dynamics.vector_field(&x, &u)).norm();
        let r2 = (map.measure(&gx) - action.act_measurement(g, &map.measure(&x))).norm();
        r1max = r1max.max(r1);
        r2max = r2max.max(r2);
        r1sum += r1;
        r2sum += r2;
    }
    let used = (n_samples - skipped).max(1) as f64;
    Ok(CompatibilityReport {
        action_name: action.name().to_string(),
        n_samples,
        residual1_max: r1max,
        residual1_mean: r1sum / used,
        residual2_max: r2max,
        residual2_mean: r2sum / used,
        skipped,
    })
}
