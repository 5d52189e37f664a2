//! Measurement maps, noise patterns and fiber membership.

pub mod noise;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};

pub use noise::{preset, BoundContext, MeasurementModel, NoisePattern, PRESET_NAMES};

use crate::math::jacobian_fd;

/// Ideal measurement map `h`.
pub trait MeasurementMap: Send + Sync {
    fn output_dim(&self) -> usize;
    fn measure(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        jacobian_fd(|z| self.measure(z), x, 1e-6)
    }
}

/// Coordinate selection `h(x) = x[coords]`.
#[derive(Clone, Debug)]
pub struct Selection {
    pub coords: Vec<usize>,
    pub state_dim: usize,
}

impl Selection {
    pub fn identity(n: usize) -> Self {
        Self {
            coords: (0..n).collect(),
            state_dim: n,
        }
    }
}

impl MeasurementMap for Selection {
    fn output_dim(&self) -> usize {
        self.coords.len()
    }
    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.coords.len(), self.coords.iter().map(|&c| x[c]))
    }
    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.coords.len(), self.state_dim);
        for (r, &c) in self.coords.iter().enumerate() {
            j[(r, c)] = 1.0;
        }
        j
    }
}

/// Four depth readings in world-frame sectors front (+x), back (−x),
/// left (+y) and right (−y).
///
/// Each obstacle is assigned to the sector containing its horizontal bearing
/// from the vehicle; a sector reads the distance `‖p − p_obs‖` to its nearest
/// obstacle, or `max_range` when empty.
#[derive(Clone, Debug)]
pub struct DepthSensors {
    pub obstacles: Vec<Vector3<f64>>,
    pub max_range: f64,
}

impl DepthSensors {
    fn sector(d: &Vector3<f64>) -> usize {
        let phi = d.y.atan2(d.x).to_degrees();
        if phi.abs() <= 45.0 {
            0
        } else if phi.abs() > 135.0 {
            1
        } else if phi > 0.0 {
            2
        } else {
            3
        }
    }
}

impl MeasurementMap for DepthSensors {
    fn output_dim(&self) -> usize {
        4
    }
    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = Vector3::new(x[0], x[1], x[2]);
        let mut out = DVector::from_element(4, self.max_range);
        for o in &self.obstacles {
            let d = o - p;
            let s = Self::sector(&d);
            out[s] = out[s].min(d.norm());
        }
        out
    }
}

/// `‖y − h(x)‖ ≤ δ_v` in the Euclidean metric.
pub fn fiber_contains(map: &dyn MeasurementMap, x: &DVector<f64>, y: &DVector<f64>, delta_v: f64) -> bool {
    (y - map.measure(x)).norm() <= delta_v
}

pub type SharedMap = Arc<dyn MeasurementMap>;
