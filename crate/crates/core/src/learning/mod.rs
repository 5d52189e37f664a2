//! Uncertainty-weighted dynamics learning, its closed-form oracle, the
//! convergence-law fit and safety-constrained policy search.

pub mod convergence;
pub mod dataset;
pub mod fit;
pub mod policy;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use convergence::{convergence_check, ConvergenceFit};
pub use dataset::{build_dataset, DataPoint, Dataset, DatasetConfig, DerivativeSource};
pub use fit::{
    fit_gd, fit_wls_closed_form, gradient, loss, model_error, ErrorProbe, GdConfig, ModelError, TraceRow,
};
pub use policy::{evaluate_policy, optimize_policy, PolicyConfig, PolicyEvaluation, PolicyOutcome, PolicyParams};

use crate::error::{contract, Result};

/// Monomials up to total degree `degree` in normalized state coordinates
/// `(x[dᵢ] − centerᵢ)/scaleᵢ`, followed by the raw control channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub degree: usize,
    pub dims: Vec<usize>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub control_dim: usize,
    exponents: Vec<Vec<u32>>,
}

impl Basis {
    pub fn new(degree: usize, dims: Vec<usize>, center: Vec<f64>, scale: Vec<f64>, control_dim: usize) -> Result<Self> {
        if center.len() != dims.len() || scale.len() != dims.len() {
            return Err(contract("basis: one center and scale per dimension"));
        }
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(contract("basis: scales must be positive"));
        }
        let exponents = monomials(dims.len(), degree);
        Ok(Self {
            degree,
            dims,
            center,
            scale,
            control_dim,
            exponents,
        })
    }

    /// Basis normalized to a state box: centered, scaled by the half-widths.
    pub fn for_box(degree: usize, bounds: &[(f64, f64)], control_dim: usize) -> Result<Self> {
        let dims = (0..bounds.len()).collect();
        let center = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        let scale = bounds.iter().map(|(lo, hi)| (0.5 * (hi - lo)).max(1e-12)).collect();
        Self::new(degree, dims, center, scale, control_dim)
    }

    pub fn len(&self) -> usize {
        self.exponents.len() + self.control_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let z: Vec<f64> = self
            .dims
            .iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(&d, (c, s))| (x[d] - c) / s)
            .collect();
        let mut phi = DVector::zeros(self.len());
        for (k, e) in self.exponents.iter().enumerate() {
            phi[k] = e.iter().zip(&z).map(|(&p, v)| v.powi(p as i32)).product();
        }
        let off = self.exponents.len();
        for j in 0..self.control_dim {
            phi[off + j] = u[j];
        }
        phi
    }
}

/// Exponent vectors with total degree ≤ `degree`, graded then lexicographic.
fn monomials(n: usize, degree: usize) -> Vec<Vec<u32>> {
    fn rec(n: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == n {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for p in (0..=left).rev() {
            cur.push(p);
            rec(n, left - p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for d in 0..=degree as u32 {
        rec(n, d, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

/// `f̂(x,u) = W·φ(x,u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedDynamics {
    pub basis: Basis,
    pub weights: DMatrix<f64>,
}

impl LearnedDynamics {
    pub fn zeros(basis: Basis, state_dim: usize) -> Self {
        let p = basis.len();
        Self {
            basis,
            weights: DMatrix::zeros(state_dim, p),
        }
    }

    pub fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.weights * self.basis.features(x, u)
    }
}
