//! Exothermic batch reactor `A → B` with jacket cooling and feed.
//!
//! State `[T (°C), C_A, C_B (mol/L)]`, control `[T_c (°C), F_in (L/s)]`:
//!
//! ```text
//! Ṫ   = −(k_c/m c_p)(T − T_c) + (ΔH/c_p) r
//! Ċ_A = (F_in/V)(C_A0 − C_A) − r
//! Ċ_B = r − (F_in/V) C_B
//! r   = k₀ exp(−E_a/(R T_K)) C_A,   T_K = T + 273.15
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::params::{axis_constraints, EnvFile, GoalSpec};
use super::{ControlAffine, EnvironmentSpec, Goal};
use crate::error::{config, Result};
use crate::measurement::Selection;

pub const DEFAULT_PARAMS: &str = include_str!("../../params/reactor.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactorParams {
    pub k_c: f64,
    pub m_cp: f64,
    /// ΔH/c_p, K·L/mol.
    pub dh_cp: f64,
    pub k0: f64,
    /// E_a/R, K.
    pub ea_r: f64,
    pub volume: f64,
    pub c_a0: f64,
}

pub type ReactorFile = EnvFile<ReactorParams>;

pub fn default_file() -> ReactorFile {
    ReactorFile::from_json(DEFAULT_PARAMS).expect("bundled reactor parameters are valid")
}

#[derive(Clone, Debug)]
pub struct Reactor {
    pub p: ReactorParams,
}

impl Reactor {
    pub fn rate(&self, t: f64, c_a: f64) -> f64 {
        self.p.k0 * (-self.p.ea_r / (t + 273.15)).exp() * c_a
    }

    pub fn cooling(&self) -> f64 {
        self.p.k_c / self.p.m_cp
    }
}

impl ControlAffine for Reactor {
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.rate(x[0], x[1]);
        DVector::from_vec(vec![-self.cooling() * x[0] + self.p.dh_cp * r, -r, r])
    }
    fn control_gain(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let v = self.p.volume;
        DMatrix::from_row_slice(
            3,
            2,
            &[
                self.cooling(),
                0.0,
                0.0,
                (self.p.c_a0 - x[1]) / v,
                0.0,
                -x[2] / v,
            ],
        )
    }
}

pub fn spec(file: &ReactorFile) -> Result<EnvironmentSpec> {
    let constraints = axis_constraints(&file.constraints, &["T", "C_A", "C_B"]);
    let goal = match &file.goal {
        GoalSpec::AtLeast { coord, threshold } => Goal::AtLeast {
            coord: *coord,
            threshold: threshold * file.params.c_a0,
        },
        _ => return Err(config("reactor: goal must be at_least")),
    };
    Ok(EnvironmentSpec {
        name: file.name.clone(),
        dynamics: Arc::new(Reactor { p: file.params.clone() }),
        dt: file.dt,
        control_bounds: ReactorFile::bounds(&file.control_bounds),
        process_gain: file.process_gain_vec(3)?,
        certificate: constraints.tightened(file.certificate_margin),
        constraints,
        measurement: Arc::new(Selection {
            coords: vec![0, 1],
            state_dim: 3,
        }),
        goal,
        operating_box: ReactorFile::bounds(&file.operating_box),
        path_coords: vec![1, 2],
        log_interval: file.log_interval,
    })
}

pub fn default_spec() -> EnvironmentSpec {
    spec(&default_file()).expect("default reactor spec")
}
