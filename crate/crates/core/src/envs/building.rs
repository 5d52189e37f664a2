//! Multi-zone building climate: zone temperatures and humidities on a chain
//! of adjacent zones.
//!
//! `Ṫᵢ = Σⱼ k(Tⱼ − Tᵢ) + α(T_amb − Tᵢ) + β uᵢ` and the humidity block follows
//! the same mass-transfer form with its own coefficients.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::params::{axis_constraints, EnvFile, GoalSpec};
use super::{ControlAffine, EnvironmentSpec, Goal};
use crate::error::{config, Result};
use crate::measurement::Selection;

pub const DEFAULT_PARAMS: &str = include_str!("../../params/building.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingParams {
    pub n_zones: usize,
    /// Heat transfer between adjacent zones, 1/s.
    pub k_adj: f64,
    pub k_humidity: f64,
    pub alpha: f64,
    pub t_amb: f64,
    pub beta: f64,
    pub alpha_h: f64,
    pub h_amb: f64,
    pub beta_h: f64,
}

pub type BuildingFile = EnvFile<BuildingParams>;

pub fn default_file() -> BuildingFile {
    BuildingFile::from_json(DEFAULT_PARAMS).expect("bundled building parameters are valid")
}

#[derive(Clone, Debug)]
pub struct Building {
    pub p: BuildingParams,
}

impl Building {
    pub fn new(p: BuildingParams) -> Self {
        Self { p }
    }

    fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.p.n_zones;
        [i.checked_sub(1), if i + 1 < n { Some(i + 1) } else { None }]
            .into_iter()
            .flatten()
    }
}

impl ControlAffine for Building {
    fn state_dim(&self) -> usize {
        2 * self.p.n_zones
    }
    fn control_dim(&self) -> usize {
        2 * self.p.n_zones
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.p.n_zones;
        let mut d = DVector::zeros(2 * n);
        for i in 0..n {
            let mut dt = self.p.alpha * (self.p.t_amb - x[i]);
            let mut dh = self.p.alpha_h * (self.p.h_amb - x[n + i]);
            for j in self.neighbors(i) {
                dt += self.p.k_adj * (x[j] - x[i]);
                dh += self.p.k_humidity * (x[n + j] - x[n + i]);
            }
            d[i] = dt;
            d[n + i] = dh;
        }
        d
    }
    fn control_gain(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.p.n_zones;
        let mut g = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            g[(i, i)] = self.p.beta;
            g[(n + i, n + i)] = self.p.beta_h;
        }
        g
    }
}

pub fn coord_names(n: usize) -> Vec<String> {
    (1..=n)
        .map(|i| format!("T{i}"))
        .chain((1..=n).map(|i| format!("H{i}")))
        .collect()
}

/// Environment with goal setpoints `targets` (one per zone).
pub fn spec(file: &BuildingFile, targets: &[f64]) -> Result<EnvironmentSpec> {
    let n = file.params.n_zones;
    if file.control_bounds.len() != 2 * n || file.operating_box.len() != 2 * n {
        return Err(config("building: bounds do not match 2·n_zones"));
    }
    let names = coord_names(n);
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let constraints = axis_constraints(&file.constraints, &names);
    let goal = match &file.goal {
        GoalSpec::Region { coords, tol, .. } => {
            if targets.len() != coords.len() {
                return Err(config("building: one target per goal coordinate"));
            }
            Goal::Region {
                coords: coords.clone(),
                target: targets.to_vec(),
                tol: *tol,
            }
        }
        _ => return Err(config("building: goal must be a region")),
    };
    Ok(EnvironmentSpec {
        name: file.name.clone(),
        dynamics: Arc::new(Building::new(file.params.clone())),
        dt: file.dt,
        control_bounds: BuildingFile::bounds(&file.control_bounds),
        process_gain: file.process_gain_vec(2 * n)?,
        certificate: constraints.tightened(file.certificate_margin),
        constraints,
        measurement: Arc::new(Selection::identity(2 * n)),
        goal,
        operating_box: BuildingFile::bounds(&file.operating_box),
        path_coords: (0..n).collect(),
        log_interval: file.log_interval,
    })
}

pub fn default_spec() -> EnvironmentSpec {
    spec(&default_file(), &[23.0, 23.0, 23.0]).expect("default building spec")
}
