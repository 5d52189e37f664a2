//! Measurement-adapted barrier values and the QP safety filter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::barrier::BarrierSet;
use super::qp;
use crate::envs::EnvironmentSpec;
use crate::measurement::MeasurementMap;
use crate::sim::{Controller, Observation};

/// Measurement-adapted CBF `b(x, y) = b₀(x) − L_b‖y − h(x)‖` with `α(b) = κb`.
#[derive(Clone, Debug)]
pub struct Mcbf {
    pub base: BarrierSet,
    pub l_b: f64,
    pub kappa: f64,
}

impl Mcbf {
    pub fn new(base: BarrierSet, l_b: f64, kappa: f64) -> Self {
        Self { base, l_b, kappa }
    }

    /// Uses the environment's certificate as base barrier.
    pub fn for_env(env: &EnvironmentSpec, l_b: f64, kappa: f64) -> Self {
        Self::new(env.certificate.clone(), l_b, kappa)
    }
}

pub fn mcbf_value(mcbf: &Mcbf, x_est: &DVector<f64>, y: &DVector<f64>, map: &dyn MeasurementMap) -> f64 {
    mcbf.base.min_value(x_est) - mcbf.l_b * (y - map.measure(x_est)).norm()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDiagnostics {
    /// Barrier indices whose constraint is active at the returned control.
    pub active: Vec<usize>,
    pub modification: f64,
    pub feasible: bool,
}

/// Affine rows `A u ≥ c` of the filter at `(x_est, y)`.
///
/// Row `i`: `∇bᵢ·(f₀ + G u) + κ(bᵢ − L_b r) ≥ ‖∇bᵢ ⊙ g‖·δ_w` where
/// `r = ‖y − h(x_est)‖`.
pub fn filter_rows(
    env: &EnvironmentSpec,
    mcbf: &Mcbf,
    x_est: &DVector<f64>,
    y: &DVector<f64>,
    delta_w: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let m = mcbf.base.len();
    let n = env.control_dim();
    let f0 = env.dynamics.drift(x_est);
    let g = env.dynamics.control_gain(x_est);
    let r = (y - env.measurement.measure(x_est)).norm();
    let mut a = DMatrix::zeros(m, n);
    let mut c = DVector::zeros(m);
    for (i, b) in mcbf.base.barriers.iter().enumerate() {
        let grad = b.gradient(x_est);
        let row = g.transpose() * &grad;
        a.set_row(i, &row.transpose());
        let tighten = grad.component_mul(&env.process_gain).norm() * delta_w;
        c[i] = tighten - grad.dot(&f0) - mcbf.kappa * (b.value(x_est) - mcbf.l_b * r);
    }
    (a, c)
}

/// Minimal correction of `u_nom` satisfying the mCBF condition for every base
/// barrier inside the control box.
pub fn safety_filter(
    env: &EnvironmentSpec,
    mcbf: &Mcbf,
    x_est: &DVector<f64>,
    y: &DVector<f64>,
    u_nom: &DVector<f64>,
    delta_w: f64,
) -> (DVector<f64>, FilterDiagnostics) {
    let (a, c) = filter_rows(env, mcbf, x_est, y, delta_w);
    let sol = qp::solve(&a, &c, &env.control_bounds, u_nom);
    let diag = FilterDiagnostics {
        active: sol.active.clone(),
        modification: (&sol.u - u_nom).norm(),
        feasible: sol.feasible,
    };
    (sol.u, diag)
}

/// Wraps a nominal controller with [`safety_filter`] at every step.
pub struct FilteredController<C> {
    pub inner: C,
    pub env: EnvironmentSpec,
    pub mcbf: Mcbf,
    pub delta_w: f64,
    diagnostics: Vec<FilterDiagnostics>,
}

impl<C: Controller> FilteredController<C> {
    pub fn new(inner: C, env: EnvironmentSpec, mcbf: Mcbf, delta_w: f64) -> Self {
        Self {
            inner,
            env,
            mcbf,
            delta_w,
            diagnostics: Vec::new(),
        }
    }
}

impl<C: Controller> Controller for FilteredController<C> {
    fn control(&mut self, obs: &Observation<'_>) -> DVector<f64> {
        let u_nom = self.inner.control(obs);
        if u_nom.iter().any(|v| !v.is_finite()) {
            return u_nom;
        }
        let (u, d) = safety_filter(&self.env, &self.mcbf, obs.x_est, obs.y, &u_nom, self.delta_w);
        self.diagnostics.push(d);
        u
    }

    fn take_diagnostics(&mut self) -> Vec<FilterDiagnostics> {
        std::mem::take(&mut self.diagnostics)
    }
}
