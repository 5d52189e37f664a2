//! Scalar barrier functions and barrier sets.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DVector, Vector3};

use crate::envs::ControlAffine;
use crate::math::gradient_fd;

pub trait Barrier: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        gradient_fd(|z| self.value(z), x, 1e-6)
    }
    /// Declared Lipschitz constant in the Euclidean state norm, when known.
    fn lipschitz(&self) -> Option<f64> {
        None
    }
}

/// `sign·(x[coord] − bound)`: `Lower` keeps `x ≥ bound`, `Upper` keeps `x ≤ bound`.
#[derive(Clone, Debug)]
pub struct AxisBound {
    pub name: String,
    pub coord: usize,
    pub bound: f64,
    pub upper: bool,
}

impl AxisBound {
    pub fn lower(name: impl Into<String>, coord: usize, bound: f64) -> Self {
        Self {
            name: name.into(),
            coord,
            bound,
            upper: false,
        }
    }

    pub fn upper(name: impl Into<String>, coord: usize, bound: f64) -> Self {
        Self {
            name: name.into(),
            coord,
            bound,
            upper: true,
        }
    }
}

impl Barrier for AxisBound {
    fn name(&self) -> &str {
        &self.name
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        if self.upper {
            self.bound - x[self.coord]
        } else {
            x[self.coord] - self.bound
        }
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        g[self.coord] = if self.upper { -1.0 } else { 1.0 };
        g
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// `‖p − c‖ − r` over the position block at coords `0..3`.
#[derive(Clone, Debug)]
pub struct SphereClearance {
    pub name: String,
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl Barrier for SphereClearance {
    fn name(&self) -> &str {
        &self.name
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        let p = Vector3::new(x[0], x[1], x[2]);
        (p - self.center).norm() - self.radius
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = Vector3::new(x[0], x[1], x[2]);
        let d = p - self.center;
        let n = d.norm();
        let mut g = DVector::zeros(x.len());
        if n > 0.0 {
            for i in 0..3 {
                g[i] = d[i] / n;
            }
        }
        g
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Braking-distance clearance for a double integrator with state `(p, v)` at
/// coords `0..6`:
/// `b = ‖p − c‖ − r − max(0, −n·v)² / (2a)` with `n = (p − c)/‖p − c‖`.
///
/// `b ≥ 0` implies the sphere clearance is nonnegative, and braking at `a`
/// keeps it so.
#[derive(Clone, Debug)]
pub struct BrakingClearance {
    pub name: String,
    pub center: Vector3<f64>,
    pub radius: f64,
    pub decel: f64,
}

impl Barrier for BrakingClearance {
    fn name(&self) -> &str {
        &self.name
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        let p = Vector3::new(x[0], x[1], x[2]);
        let v = Vector3::new(x[3], x[4], x[5]);
        let d = p - self.center;
        let dist = d.norm();
        let s = if dist > 0.0 {
            (-(d.dot(&v)) / dist).max(0.0)
        } else {
            0.0
        };
        dist - self.radius - s * s / (2.0 * self.decel)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = Vector3::new(x[0], x[1], x[2]);
        let v = Vector3::new(x[3], x[4], x[5]);
        let d = p - self.center;
        let dist = d.norm();
        let mut g = DVector::zeros(x.len());
        if dist == 0.0 {
            return g;
        }
        let n = d / dist;
        let nv = n.dot(&v);
        let s = (-nv).max(0.0);
        let k = s / self.decel;
        let gp = n + (v - n * nv) * (k / dist);
        let gv = n * k;
        for i in 0..3 {
            g[i] = gp[i];
            g[3 + i] = gv[i];
        }
        g
    }
}

/// Braking form of a relative-degree-two barrier `h` whose derivative `L_f h`
/// does not depend on the control:
/// `b = h − max(0, −∇h·f₀)² / (2a)`.
pub struct BrakingBarrier {
    pub name: String,
    pub inner: Arc<dyn Barrier>,
    pub dynamics: Arc<dyn ControlAffine>,
    pub decel: f64,
}

impl BrakingBarrier {
    fn rate(&self, x: &DVector<f64>) -> f64 {
        self.inner.gradient(x).dot(&self.dynamics.drift(x))
    }
}

impl Barrier for BrakingBarrier {
    fn name(&self) -> &str {
        &self.name
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        let s = (-self.rate(x)).max(0.0);
        self.inner.value(x) - s * s / (2.0 * self.decel)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        // ∇b = ∇h + (s/a)∇(∇h·f₀); the inner barrier is affine in practice so
        // only the rate term needs differencing.
        let s = (-self.rate(x)).max(0.0);
        let mut g = self.inner.gradient(x);
        if s > 0.0 {
            let gr = gradient_fd(|z| self.rate(z), x, 1e-6);
            g += gr * (s / self.decel);
        }
        g
    }
}

/// `inner(x) − margin`.
pub struct Shifted {
    pub name: String,
    pub inner: Arc<dyn Barrier>,
    pub margin: f64,
}

impl Shifted {
    pub fn new(inner: Arc<dyn Barrier>, margin: f64) -> Self {
        Self {
            name: format!("{}_cert", inner.name()),
            inner,
            margin,
        }
    }
}

impl Barrier for Shifted {
    fn name(&self) -> &str {
        &self.name
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.inner.value(x) - self.margin
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.gradient(x)
    }
    fn lipschitz(&self) -> Option<f64> {
        self.inner.lipschitz()
    }
}

/// A list of barriers whose pointwise minimum is the safe-set margin `b₀`.
#[derive(Clone, Default)]
pub struct BarrierSet {
    pub barriers: Vec<Arc<dyn Barrier>>,
}

impl fmt::Debug for BarrierSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

impl BarrierSet {
    pub fn new(barriers: Vec<Arc<dyn Barrier>>) -> Self {
        Self { barriers }
    }

    pub fn push(&mut self, b: impl Barrier + 'static) {
        self.barriers.push(Arc::new(b));
    }

    pub fn len(&self) -> usize {
        self.barriers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.barriers.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.barriers.iter().map(|b| b.name()).collect()
    }

    pub fn values(&self, x: &DVector<f64>) -> Vec<f64> {
        self.barriers.iter().map(|b| b.value(x)).collect()
    }

    /// `b₀(x)`; `+∞` for an empty set.
    pub fn min_value(&self, x: &DVector<f64>) -> f64 {
        self.barriers
            .iter()
            .map(|b| b.value(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.min_value(x) >= 0.0
    }

    /// Every barrier shifted down by `margin`.
    pub fn tightened(&self, margin: f64) -> Self {
        Self {
            barriers: self
                .barriers
                .iter()
                .map(|b| Arc::new(Shifted::new(b.clone(), margin)) as Arc<dyn Barrier>)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::gradient_fd;

    #[test]
    fn braking_gradient_matches_differences() {
        let b = BrakingClearance {
            name: "obs".into(),
            center: Vector3::new(1.0, 0.0, 0.5),
            radius: 0.2,
            decel: 2.0,
        };
        let x = DVector::from_vec(vec![0.1, 0.2, 0.4, 0.6, -0.1, 0.05]);
        let g = b.gradient(&x);
        let fd = gradient_fd(|z| b.value(z), &x, 1e-6);
        assert!((g - fd).amax() < 1e-7);
    }

    #[test]
    fn braking_is_below_clearance() {
        let b = BrakingClearance {
            name: "obs".into(),
            center: Vector3::zeros(),
            radius: 0.2,
            decel: 1.0,
        };
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        assert!((b.value(&x) - (0.8 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn set_minimum() {
        let mut s = BarrierSet::default();
        s.push(AxisBound::lower("lo", 0, 20.0));
        s.push(AxisBound::upper("hi", 0, 26.0));
        let x = DVector::from_vec(vec![23.5]);
        assert_eq!(s.min_value(&x), 2.5);
        assert_eq!(s.tightened(0.5).min_value(&x), 2.0);
    }
}
