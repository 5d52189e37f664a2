//! Ring power network with swing-equation frequency dynamics.
//!
//! State `[Δf (Hz) ×n, ΔP (kW) ×n, Δθ (rad) ×n]`, control `u = ΔṖ` (kW/s):
//!
//! ```text
//! Δḟᵢ = (ΔPᵢ − D Δfᵢ − Σⱼ B (Δθᵢ − Δθⱼ)) / 2H
//! ΔṖᵢ = uᵢ
//! Δθ̇ᵢ = 2π Δfᵢ
//! ```
//!
//! The frequency band has relative degree two in `u`, so the filter uses the
//! braking form of each band constraint.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::params::{axis_constraints, EnvFile, GoalSpec};
use super::{ControlAffine, EnvironmentSpec, Goal};
use crate::error::{config, Result};
use crate::measurement::Selection;
use crate::safety::barrier::{Barrier, BarrierSet, BrakingBarrier, Shifted};

pub const DEFAULT_PARAMS: &str = include_str!("../../params/grid.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub n_nodes: usize,
    /// 2H, kW·s/Hz.
    pub two_h: f64,
    /// D, kW/Hz.
    pub damping: f64,
    /// B, kW/rad.
    pub coupling: f64,
    /// Frequency deceleration assumed by the braking certificate, Hz/s².
    pub brake_decel: f64,
}

pub type GridFile = EnvFile<GridParams>;

pub fn default_file() -> GridFile {
    GridFile::from_json(DEFAULT_PARAMS).expect("bundled grid parameters are valid")
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub p: GridParams,
}

impl Grid {
    fn neighbors(&self, i: usize) -> [usize; 2] {
        let n = self.p.n_nodes;
        [(i + n - 1) % n, (i + 1) % n]
    }
}

impl ControlAffine for Grid {
    fn state_dim(&self) -> usize {
        3 * self.p.n_nodes
    }
    fn control_dim(&self) -> usize {
        self.p.n_nodes
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.p.n_nodes;
        let mut d = DVector::zeros(3 * n);
        for i in 0..n {
            let mut flow = 0.0;
            if n > 1 {
                for j in self.neighbors(i) {
                    flow += self.p.coupling * (x[2 * n + i] - x[2 * n + j]);
                }
                if n == 2 {
                    flow *= 0.5;
                }
            }
            d[i] = (x[n + i] - self.p.damping * x[i] - flow) / self.p.two_h;
            d[2 * n + i] = TAU * x[i];
        }
        d
    }
    fn control_gain(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.p.n_nodes;
        let mut g = DMatrix::zeros(3 * n, n);
        for i in 0..n {
            g[(n + i, i)] = 1.0;
        }
        g
    }
}

pub fn coord_names(n: usize) -> Vec<String> {
    (1..=n)
        .map(|i| format!("df{i}"))
        .chain((1..=n).map(|i| format!("dP{i}")))
        .chain((1..=n).map(|i| format!("dtheta{i}")))
        .collect()
}

pub fn spec(file: &GridFile) -> Result<EnvironmentSpec> {
    let n = file.params.n_nodes;
    let names = coord_names(n);
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let constraints = axis_constraints(&file.constraints, &names);
    let dynamics: Arc<dyn ControlAffine> = Arc::new(Grid { p: file.params.clone() });
    let certificate = BarrierSet::new(
        constraints
            .barriers
            .iter()
            .map(|h| {
                let shifted: Arc<dyn Barrier> = Arc::new(Shifted::new(h.clone(), file.certificate_margin));
                Arc::new(BrakingBarrier {
                    name: format!("{}_brake", h.name()),
                    inner: shifted,
                    dynamics: dynamics.clone(),
                    decel: file.params.brake_decel,
                }) as Arc<dyn Barrier>
            })
            .collect(),
    );
    let goal = match &file.goal {
        GoalSpec::Region {
            coords,
            target_range,
            tol,
        } => Goal::Region {
            coords: coords.clone(),
            target: vec![target_range[0]; coords.len()],
            tol: *tol,
        },
        _ => return Err(config("grid: goal must be a region")),
    };
    Ok(EnvironmentSpec {
        name: file.name.clone(),
        dynamics,
        dt: file.dt,
        control_bounds: GridFile::bounds(&file.control_bounds),
        process_gain: file.process_gain_vec(3 * n)?,
        constraints,
        certificate,
        measurement: Arc::new(Selection {
            coords: (0..n).collect(),
            state_dim: 3 * n,
        }),
        goal,
        operating_box: GridFile::bounds(&file.operating_box),
        path_coords: (0..n).collect(),
        log_interval: file.log_interval,
    })
}

pub fn default_spec() -> EnvironmentSpec {
    spec(&default_file()).expect("default grid spec")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::eval_dynamics;

    #[test]
    fn zero_is_equilibrium() {
        let env = default_spec();
        let d = eval_dynamics(&env, &DVector::zeros(12), &DVector::zeros(4)).unwrap();
        assert_eq!(d.amax(), 0.0);
    }

    #[test]
    fn braking_certificate_implies_band() {
        let env = default_spec();
        let mut x = DVector::zeros(12);
        x[0] = 0.4;
        x[4] = 30.0;
        let b = env.certificate.min_value(&x);
        let h = env.constraints.min_value(&x);
        assert!(b <= h);
    }
}
