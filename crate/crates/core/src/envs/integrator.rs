//! One-dimensional calibration system `ẋ = u` with a box constraint.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::params::{axis_constraints, EnvFile, GoalSpec};
use super::{ControlAffine, EnvironmentSpec, Goal};
use crate::error::{config, Result};
use crate::measurement::Selection;

pub const DEFAULT_PARAMS: &str = include_str!("../../params/integrator.json");

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoParams {}

pub type IntegratorFile = EnvFile<NoParams>;

pub fn default_file() -> IntegratorFile {
    IntegratorFile::from_json(DEFAULT_PARAMS).expect("bundled integrator parameters are valid")
}

#[derive(Clone, Copy, Debug)]
pub struct Integrator;

impl ControlAffine for Integrator {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn drift(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn control_gain(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
}

pub fn spec(file: &IntegratorFile) -> Result<EnvironmentSpec> {
    let constraints = axis_constraints(&file.constraints, &["x"]);
    let goal = match &file.goal {
        GoalSpec::Region {
            coords,
            target_range,
            tol,
        } => Goal::Region {
            coords: coords.clone(),
            target: vec![target_range[0]],
            tol: *tol,
        },
        _ => return Err(config("integrator: goal must be a region")),
    };
    Ok(EnvironmentSpec {
        name: file.name.clone(),
        dynamics: Arc::new(Integrator),
        dt: file.dt,
        control_bounds: IntegratorFile::bounds(&file.control_bounds),
        process_gain: file.process_gain_vec(1)?,
        certificate: constraints.tightened(file.certificate_margin),
        constraints,
        measurement: Arc::new(Selection::identity(1)),
        goal,
        operating_box: IntegratorFile::bounds(&file.operating_box),
        path_coords: vec![0],
        log_interval: file.log_interval,
    })
}

pub fn default_spec() -> EnvironmentSpec {
    spec(&default_file()).expect("default integrator spec")
}
