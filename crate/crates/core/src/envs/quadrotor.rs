//! Rigid-body quadrotor on `SE(3)` with rotor-speed-squared inputs.
//!
//! State (18): `p`, `v`, `R` row-major, `ω`. Control (4): `ωᵢ²` per rotor in
//! '+' configuration. Dynamics:
//!
//! ```text
//! ṗ = v
//! v̇ = (1/m)(R f − c_d v) − g e₃,    f = (0, 0, k_f Σ uᵢ)
//! Ṙ = R [ω]ₓ
//! ω̇ = J⁻¹(τ − ω × Jω)
//! ```
//!
//! After each step `R` is projected back to the nearest rotation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::params::{ConstraintSpec, EnvFile, GoalSpec};
use super::{ControlAffine, EnvironmentSpec, Goal};
use crate::error::{config, Result};
use crate::math::{project_to_rotation, skew, vee};
use crate::measurement::DepthSensors;
use crate::safety::barrier::{BarrierSet, BrakingClearance, SphereClearance};

pub const DEFAULT_PARAMS: &str = include_str!("../../params/quadrotor.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrotorParams {
    pub mass: f64,
    /// Diagonal of `J`, kg·m².
    pub inertia: [f64; 3],
    pub gravity: f64,
    /// Linear drag coefficient, kg/s.
    pub drag: f64,
    pub k_f: f64,
    pub k_m: f64,
    pub arm: f64,
    pub obstacle_radius: f64,
    pub sensor_range: f64,
    /// Per-axis acceleration box of the translational safety layer, m/s².
    pub accel_limit: f64,
    /// Braking deceleration assumed by the clearance certificate, m/s².
    pub brake_decel: f64,
    /// Extra clearance added to `d_safe` by the certificate, m.
    pub filter_buffer: f64,
}

pub type QuadrotorFile = EnvFile<QuadrotorParams>;

pub fn default_file() -> QuadrotorFile {
    QuadrotorFile::from_json(DEFAULT_PARAMS).expect("bundled quadrotor parameters are valid")
}

#[derive(Clone, Debug)]
pub struct Quadrotor {
    pub p: QuadrotorParams,
    mix: Matrix4<f64>,
    mix_inv: Matrix4<f64>,
}

pub fn rotation(x: &DVector<f64>) -> Matrix3<f64> {
    Matrix3::from_row_slice(&x.as_slice()[6..15])
}

pub fn set_rotation(x: &mut DVector<f64>, r: &Matrix3<f64>) {
    for i in 0..3 {
        for j in 0..3 {
            x[6 + 3 * i + j] = r[(i, j)];
        }
    }
}

fn vec3(x: &DVector<f64>, at: usize) -> Vector3<f64> {
    Vector3::new(x[at], x[at + 1], x[at + 2])
}

impl Quadrotor {
    pub fn new(p: QuadrotorParams) -> Self {
        let (kf, km, l) = (p.k_f, p.k_m, p.arm);
        #[rustfmt::skip]
        let mix = Matrix4::new(
            kf, kf, kf, kf,
            0.0, kf * l, 0.0, -kf * l,
            -kf * l, 0.0, kf * l, 0.0,
            km, -km, km, -km,
        );
        let mix_inv = mix.try_inverse().expect("rotor mixing matrix is invertible");
        Self { p, mix, mix_inv }
    }

    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.p.inertia))
    }

    /// `[T, τx, τy, τz]` from rotor commands.
    pub fn wrench(&self, u: &Vector4<f64>) -> Vector4<f64> {
        self.mix * u
    }

    /// Rotor commands producing `[T, τx, τy, τz]`.
    pub fn rotor_commands(&self, wrench: &Vector4<f64>) -> Vector4<f64> {
        self.mix_inv * wrench
    }

    pub fn hover_command(&self) -> f64 {
        self.p.mass * self.p.gravity / (4.0 * self.p.k_f)
    }

    /// Identity attitude, zero rates, at `p`.
    pub fn state_at(p: Vector3<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(18);
        x[0] = p.x;
        x[1] = p.y;
        x[2] = p.z;
        set_rotation(&mut x, &Matrix3::identity());
        x
    }
}

impl ControlAffine for Quadrotor {
    fn state_dim(&self) -> usize {
        18
    }
    fn control_dim(&self) -> usize {
        4
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let v = vec3(x, 3);
        let r = rotation(x);
        let w = vec3(x, 15);
        let j = self.inertia();
        let a = -v * (self.p.drag / self.p.mass) - Vector3::z() * self.p.gravity;
        let rdot = r * skew(&w);
        let wdot = -(j.try_inverse().unwrap() * w.cross(&(j * w)));
        let mut d = DVector::zeros(18);
        for i in 0..3 {
            d[i] = v[i];
            d[3 + i] = a[i];
            d[15 + i] = wdot[i];
            for k in 0..3 {
                d[6 + 3 * i + k] = rdot[(i, k)];
            }
        }
        d
    }
    fn control_gain(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let r = rotation(x);
        let b3 = r.column(2) * (self.p.k_f / self.p.mass);
        let mut g = DMatrix::zeros(18, 4);
        for c in 0..4 {
            for i in 0..3 {
                g[(3 + i, c)] = b3[i];
                g[(15 + i, c)] = self.mix[(1 + i, c)] / self.p.inertia[i];
            }
        }
        g
    }
    fn project(&self, x: &mut DVector<f64>) {
        let r = project_to_rotation(&rotation(x));
        set_rotation(x, &r);
    }
}

/// Point-mass translational layer `ṗ = v, v̇ = a` used by the safety filter.
#[derive(Clone, Debug)]
pub struct DoubleIntegrator3;

impl ControlAffine for DoubleIntegrator3 {
    fn state_dim(&self) -> usize {
        6
    }
    fn control_dim(&self) -> usize {
        3
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut d = DVector::zeros(6);
        for i in 0..3 {
            d[i] = x[3 + i];
        }
        d
    }
    fn control_gain(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(6, 3);
        for i in 0..3 {
            g[(3 + i, i)] = 1.0;
        }
        g
    }
}

fn d_safe(file: &QuadrotorFile) -> Result<f64> {
    file.constraints
        .iter()
        .find_map(|c| match c {
            ConstraintSpec::ObstacleClearance { d_safe } => Some(*d_safe),
            _ => None,
        })
        .ok_or_else(|| config("quadrotor: missing obstacle_clearance constraint"))
}

/// Obstacle distance below which the certificate is negative at rest.
pub fn clearance_radius(file: &QuadrotorFile) -> Result<f64> {
    Ok(d_safe(file)? + file.params.filter_buffer + file.certificate_margin)
}

fn clearance_sets(file: &QuadrotorFile, obstacles: &[Vector3<f64>]) -> Result<(BarrierSet, BarrierSet)> {
    let ds = d_safe(file)?;
    let mut constraints = BarrierSet::default();
    let mut certificate = BarrierSet::default();
    for (i, c) in obstacles.iter().enumerate() {
        constraints.push(SphereClearance {
            name: format!("obstacle{i}"),
            center: *c,
            radius: ds,
        });
        certificate.push(BrakingClearance {
            name: format!("obstacle{i}_brake"),
            center: *c,
            radius: ds + file.params.filter_buffer + file.certificate_margin,
            decel: file.params.brake_decel,
        });
    }
    Ok((constraints, certificate))
}

/// Full rigid-body environment with the given obstacles and goal position.
pub fn spec(file: &QuadrotorFile, obstacles: &[Vector3<f64>], goal: Vector3<f64>) -> Result<EnvironmentSpec> {
    let (constraints, certificate) = clearance_sets(file, obstacles)?;
    let goal = match &file.goal {
        GoalSpec::Pose { tol, attitude_tol_deg } => Goal::Pose {
            position: [goal.x, goal.y, goal.z],
            tol: *tol,
            attitude_tol_deg: *attitude_tol_deg,
        },
        _ => return Err(config("quadrotor: goal must be a pose")),
    };
    Ok(EnvironmentSpec {
        name: file.name.clone(),
        dynamics: Arc::new(Quadrotor::new(file.params.clone())),
        dt: file.dt,
        control_bounds: QuadrotorFile::bounds(&file.control_bounds),
        process_gain: file.process_gain_vec(18)?,
        constraints,
        certificate,
        measurement: Arc::new(DepthSensors {
            obstacles: obstacles.to_vec(),
            max_range: file.params.sensor_range,
        }),
        goal,
        operating_box: QuadrotorFile::bounds(&file.operating_box),
        path_coords: vec![0, 1, 2],
        log_interval: file.log_interval,
    })
}

/// Translational point-mass environment seen by the safety filter.
pub fn translational_spec(file: &QuadrotorFile, obstacles: &[Vector3<f64>], goal: Vector3<f64>) -> Result<EnvironmentSpec> {
    let (constraints, certificate) = clearance_sets(file, obstacles)?;
    let a = file.params.accel_limit;
    Ok(EnvironmentSpec {
        name: format!("{}_translational", file.name),
        dynamics: Arc::new(DoubleIntegrator3),
        dt: file.dt,
        control_bounds: vec![(-a, a); 3],
        process_gain: DVector::zeros(6),
        constraints,
        certificate,
        measurement: Arc::new(DepthSensors {
            obstacles: obstacles.to_vec(),
            max_range: file.params.sensor_range,
        }),
        goal: Goal::Region {
            coords: vec![0, 1, 2],
            target: vec![goal.x, goal.y, goal.z],
            tol: match file.goal {
                GoalSpec::Pose { tol, .. } => tol,
                _ => 0.1,
            },
        },
        operating_box: QuadrotorFile::bounds(&file.operating_box[..6]),
        path_coords: vec![0, 1, 2],
        log_interval: file.log_interval,
    })
}

pub fn default_spec() -> EnvironmentSpec {
    spec(
        &default_file(),
        &[Vector3::new(1.0, 0.0, 1.0)],
        Vector3::new(0.0, 0.0, 0.6),
    )
    .expect("default quadrotor spec")
}

/// Geometric attitude tracking: maps a desired world-frame acceleration to
/// rotor commands with zero yaw.
#[derive(Clone, Debug)]
pub struct AttitudeController {
    pub quad: Quadrotor,
    pub k_r: f64,
    pub k_w: f64,
}

impl AttitudeController {
    pub fn new(p: QuadrotorParams) -> Self {
        Self {
            quad: Quadrotor::new(p),
            k_r: 2.0,
            k_w: 0.12,
        }
    }

    pub fn command(&self, x: &DVector<f64>, accel: &Vector3<f64>, u_max: f64) -> DVector<f64> {
        let p = &self.quad.p;
        let v = vec3(x, 3);
        let r = rotation(x);
        let w = vec3(x, 15);
        let mut f = (accel + Vector3::z() * p.gravity) * p.mass + v * p.drag;
        if f.z < 0.05 * p.mass * p.gravity {
            f.z = 0.05 * p.mass * p.gravity;
        }
        let b3 = f.normalize();
        let b2 = b3.cross(&Vector3::x()).normalize();
        let b1 = b2.cross(&b3);
        let rd = Matrix3::from_columns(&[b1, b2, b3]);
        let thrust = f.dot(&r.column(2));
        let e_r = vee(&(rd.transpose() * r - r.transpose() * rd)) * 0.5;
        let j = self.quad.inertia();
        let m = -e_r * self.k_r - w * self.k_w + w.cross(&(j * w));
        let u = self.quad.rotor_commands(&Vector4::new(thrust.max(0.0), m.x, m.y, m.z));
        DVector::from_iterator(4, u.iter().map(|c| c.clamp(0.0, u_max)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::eval_dynamics;

    #[test]
    fn hover_is_stationary() {
        let env = default_spec();
        let q = Quadrotor::new(default_file().params);
        let x = Quadrotor::state_at(Vector3::new(0.0, 0.0, 1.0));
        let u = DVector::from_element(4, q.hover_command());
        let d = eval_dynamics(&env, &x, &u).unwrap();
        assert!(d.amax() < 1e-12, "{d}");
    }

    #[test]
    fn mixing_roundtrip() {
        let q = Quadrotor::new(default_file().params);
        let w = Vector4::new(5.0, 0.01, -0.02, 0.001);
        let u = q.rotor_commands(&w);
        assert!((q.wrench(&u) - w).amax() < 1e-12);
    }
}
