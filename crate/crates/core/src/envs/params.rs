//! Versioned environment parameter files.
//!
//! Coefficients the task descriptions leave open are configuration, not ground
//! truth. The defaults live in `params/*.json` and are compiled in.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

pub const PARAMS_VERSION: u32 = 1;

/// Declared constraint on state coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    /// `lower ≤ x[c] ≤ upper` for every listed coordinate.
    Band {
        coords: Vec<usize>,
        lower: f64,
        upper: f64,
    },
    Upper {
        coord: usize,
        bound: f64,
    },
    /// `‖p − p_obs,i‖ − d_safe ≥ 0` for every obstacle of the episode.
    ObstacleClearance {
        d_safe: f64,
    },
}

/// Common file layout; `P` carries the environment-specific coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvFile<P> {
    pub name: String,
    pub version: u32,
    pub dt: f64,
    pub log_interval: f64,
    pub params: P,
    pub control_bounds: Vec<[f64; 2]>,
    pub constraints: Vec<ConstraintSpec>,
    pub goal: GoalSpec,
    pub operating_box: Vec<[f64; 2]>,
    pub start_box: Vec<[f64; 2]>,
    /// Diagonal of `g(x)`; a single entry is broadcast.
    pub process_gain: Vec<f64>,
    /// Shift between declared constraints and the filter's certificate.
    pub certificate_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GoalSpec {
    /// Targets sampled uniformly from `target_range` per coordinate.
    Region {
        coords: Vec<usize>,
        target_range: [f64; 2],
        tol: f64,
    },
    AtLeast {
        coord: usize,
        threshold: f64,
    },
    Pose {
        tol: f64,
        attitude_tol_deg: f64,
    },
}

impl<P: DeserializeOwned> EnvFile<P> {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(text).map_err(|e| config(e.to_string()))?;
        f.validate()?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

impl<P> EnvFile<P> {
    pub fn validate(&self) -> Result<()> {
        if self.version != PARAMS_VERSION {
            return Err(config(format!(
                "{}: parameter file version {} unsupported (expected {PARAMS_VERSION})",
                self.name, self.version
            )));
        }
        if !(self.dt > 0.0) {
            return Err(config(format!("{}: dt must be positive", self.name)));
        }
        for b in self
            .control_bounds
            .iter()
            .chain(&self.operating_box)
            .chain(&self.start_box)
        {
            if b[0] > b[1] {
                return Err(config(format!("{}: bound {:?} is inverted", self.name, b)));
            }
        }
        if self.start_box.len() != self.operating_box.len() {
            return Err(config(format!(
                "{}: start_box and operating_box differ in length",
                self.name
            )));
        }
        Ok(())
    }

    pub fn bounds(v: &[[f64; 2]]) -> Vec<(f64, f64)> {
        v.iter().map(|b| (b[0], b[1])).collect()
    }

    pub fn process_gain_vec(&self, n: usize) -> Result<nalgebra::DVector<f64>> {
        match self.process_gain.len() {
            1 => Ok(nalgebra::DVector::from_element(n, self.process_gain[0])),
            k if k == n => Ok(nalgebra::DVector::from_vec(self.process_gain.clone())),
            k => Err(config(format!(
                "{}: process_gain has {k} entries, expected 1 or {n}",
                self.name
            ))),
        }
    }
}

/// Barriers for the axis-aligned constraint specs, named after `coord_names`.
pub fn axis_constraints(
    specs: &[ConstraintSpec],
    coord_names: &[&str],
) -> crate::safety::barrier::BarrierSet {
    use crate::safety::barrier::{AxisBound, BarrierSet};
    let mut set = BarrierSet::default();
    for s in specs {
        match s {
            ConstraintSpec::Band {
                coords,
                lower,
                upper,
            } => {
                for &c in coords {
                    set.push(AxisBound::lower(format!("{}_min", coord_names[c]), c, *lower));
                    set.push(AxisBound::upper(format!("{}_max", coord_names[c]), c, *upper));
                }
            }
            ConstraintSpec::Upper { coord, bound } => {
                set.push(AxisBound::upper(
                    format!("{}_max", coord_names[*coord]),
                    *coord,
                    *bound,
                ));
            }
            ConstraintSpec::ObstacleClearance { .. } => {}
        }
    }
    set
}
