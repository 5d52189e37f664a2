//! Weighted loss, gradient descent and the normal-equations oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Basis, Dataset, LearnedDynamics};
use crate::envs::EnvironmentSpec;
use crate::error::{contract, Error, Result};
use crate::math::{uniform_in_box, SimRng};

/// `Σᵢ rᵢᵀ Σᵢ⁻¹ rᵢ` with `rᵢ = f̂(xᵢ,uᵢ) − ẋᵢ`.
pub fn loss(model: &LearnedDynamics, data: &Dataset) -> Result<f64> {
    let prec = data.precisions()?;
    Ok(Prepared::new(&model.basis, data, prec).loss(&model.weights))
}

/// `∇_W` of [`loss`]: `Σᵢ 2 Σᵢ⁻¹ rᵢ φᵢᵀ`.
pub fn gradient(model: &LearnedDynamics, data: &Dataset) -> Result<DMatrix<f64>> {
    let prec = data.precisions()?;
    Ok(Prepared::new(&model.basis, data, prec).gradient(&model.weights))
}

/// Features and precisions computed once per fit.
struct Prepared {
    phi: Vec<DVector<f64>>,
    xdot: Vec<DVector<f64>>,
    prec: Vec<DMatrix<f64>>,
    /// All precisions are the same multiple of the identity.
    iso: Option<f64>,
}

impl Prepared {
    fn new(basis: &Basis, data: &Dataset, prec: Vec<DMatrix<f64>>) -> Self {
        let phi = data.points.iter().map(|p| basis.features(&p.x, &p.u)).collect();
        let xdot = data.points.iter().map(|p| p.xdot.clone()).collect();
        let iso = prec.first().and_then(|p0| {
            let n = p0.nrows();
            let s = p0[(0, 0)];
            let eye = DMatrix::identity(n, n) * s;
            prec.iter().all(|p| p == &eye).then_some(s)
        });
        Self { phi, xdot, prec, iso }
    }

    fn weighted_residual(&self, i: usize, r: DVector<f64>) -> DVector<f64> {
        match self.iso {
            Some(s) => r * s,
            None => &self.prec[i] * r,
        }
    }

    fn loss(&self, w: &DMatrix<f64>) -> f64 {
        (0..self.phi.len())
            .map(|i| {
                let r = w * &self.phi[i] - &self.xdot[i];
                r.dot(&self.weighted_residual(i, r.clone()))
            })
            .sum()
    }

    fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(w.nrows(), w.ncols());
        for i in 0..self.phi.len() {
            let r = w * &self.phi[i] - &self.xdot[i];
            let pr = self.weighted_residual(i, r);
            g.ger(2.0, &pr, &self.phi[i], 1.0);
        }
        g
    }

    /// Hessian action `V ↦ Σᵢ 2 Σᵢ⁻¹ V φᵢ φᵢᵀ`.
    fn hessian_apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for i in 0..self.phi.len() {
            let pv = self.weighted_residual(i, v * &self.phi[i]);
            out.ger(2.0, &pv, &self.phi[i], 1.0);
        }
        out
    }

    /// Largest Hessian eigenvalue by power iteration.
    fn lambda_max(&self, rows: usize, cols: usize) -> f64 {
        let mut v = DMatrix::from_fn(rows, cols, |i, j| 1.0 + ((i * 7 + j * 13) % 5) as f64 * 0.1);
        let mut lam = 0.0;
        for _ in 0..200 {
            let hv = self.hessian_apply(&v);
            let nrm = hv.norm();
            if nrm == 0.0 {
                return 0.0;
            }
            let next = hv.dot(&v) / v.norm_squared();
            v = hv / nrm;
            if (next - lam).abs() <= 1e-10 * next.abs() {
                return next;
            }
            lam = next;
        }
        lam
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    /// Step size `Λ`; `None` uses `lambda_scale / λ_max(∇²loss)`.
    pub lambda: Option<f64>,
    pub lambda_scale: f64,
    pub steps: usize,
    /// Stop once the max-norm weight update falls below `tol`; zero disables.
    pub tol: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            lambda_scale: 1.0,
            steps: 2000,
            tol: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub model_error_sup: Option<f64>,
    pub model_error_mean: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelError {
    pub sup: f64,
    pub mean: f64,
}

/// Fixed sample of `(x, u, f(x,u))` for tracking `‖f̂ − f‖` during a fit.
#[derive(Clone, Debug)]
pub struct ErrorProbe {
    points: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)>,
}

impl ErrorProbe {
    /// Uniform states in the operating box and controls in the control box.
    pub fn sample(env: &EnvironmentSpec, n: usize, rng: &mut SimRng) -> Self {
        let points = (0..n)
            .map(|_| {
                let x = uniform_in_box(&env.operating_box, rng);
                let u = uniform_in_box(&env.control_bounds, rng);
                let f = env.dynamics.vector_field(&x, &u);
                (x, u, f)
            })
            .collect();
        Self { points }
    }

    pub fn from_points(points: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)>) -> Self {
        Self { points }
    }

    pub fn evaluate(&self, model: &LearnedDynamics) -> ModelError {
        if self.points.is_empty() {
            return ModelError { sup: 0.0, mean: 0.0 };
        }
        let mut sup: f64 = 0.0;
        let mut sum = 0.0;
        for (x, u, f) in &self.points {
            let e = (model.predict(x, u) - f).norm();
            sup = sup.max(e);
            sum += e;
        }
        ModelError {
            sup,
            mean: sum / self.points.len() as f64,
        }
    }
}

/// Sampled sup and mean of `‖f̂(x,u) − f(x,u)‖` over the operating box.
pub fn model_error(model: &LearnedDynamics, env: &EnvironmentSpec, n_samples: usize, rng: &mut SimRng) -> ModelError {
    ErrorProbe::sample(env, n_samples, rng).evaluate(model)
}

/// Gradient descent on [`loss`] from zero weights.
///
/// A step that increases the loss is retried with half the step size; ten
/// consecutive halvings without descent abort with the loss trace.
pub fn fit_gd(
    data: &Dataset,
    basis: &Basis,
    cfg: &GdConfig,
    probe: Option<&ErrorProbe>,
) -> Result<(LearnedDynamics, Vec<TraceRow>)> {
    let Some(first) = data.points.first() else {
        return Err(contract("fit_gd needs a nonempty dataset"));
    };
    let n = first.x.len();
    let prep = Prepared::new(basis, data, data.precisions()?);
    let mut model = LearnedDynamics::zeros(basis.clone(), n);
    let p = basis.len();
    let mut step = match cfg.lambda {
        Some(l) if l > 0.0 => l,
        Some(l) => return Err(contract(format!("step size must be positive, got {l}"))),
        None => {
            let lmax = prep.lambda_max(n, p);
            if lmax <= 0.0 {
                return Err(contract("loss has zero curvature; features are all zero"));
            }
            cfg.lambda_scale / lmax
        }
    };
    let row = |iter: usize, loss: f64, m: &LearnedDynamics| {
        let e = probe.map(|pr| pr.evaluate(m));
        TraceRow {
            iter,
            loss,
            model_error_sup: e.map(|e| e.sup),
            model_error_mean: e.map(|e| e.mean),
        }
    };
    let mut cur = prep.loss(&model.weights);
    let mut trace = vec![row(0, cur, &model)];
    for it in 1..=cfg.steps {
        let g = prep.gradient(&model.weights);
        let mut halvings = 0;
        let (next_w, next_loss) = loop {
            let w = &model.weights - &g * step;
            let l = prep.loss(&w);
            if l <= cur * (1.0 + 1e-12) + 1e-300 {
                break (w, l);
            }
            halvings += 1;
            if halvings > 10 {
                return Err(Error::Optimization {
                    reason: format!("loss increased after 10 step halvings at iteration {it}"),
                    trace: trace.iter().map(|r| r.loss).collect(),
                });
            }
            step *= 0.5;
        };
        let change = (&next_w - &model.weights).amax();
        model.weights = next_w;
        cur = next_loss;
        trace.push(row(it, cur, &model));
        if cfg.tol > 0.0 && change < cfg.tol {
            break;
        }
    }
    Ok((model, trace))
}

/// Exact minimizer of [`loss`] from the normal equations.
///
/// Fails with the indices of features that are linearly dependent on earlier
/// ones over the dataset.
pub fn fit_wls_closed_form(data: &Dataset, basis: &Basis) -> Result<LearnedDynamics> {
    let Some(first) = data.points.first() else {
        return Err(contract("fit_wls_closed_form needs a nonempty dataset"));
    };
    let n = first.x.len();
    let prep = Prepared::new(basis, data, data.precisions()?);
    let p = basis.len();
    let mut gram = DMatrix::zeros(p, p);
    for phi in &prep.phi {
        gram.ger(1.0, phi, phi, 1.0);
    }
    let deficient = dependent_columns(&gram);
    if !deficient.is_empty() {
        return Err(Error::RankDeficient { features: deficient });
    }
    // Column-major vec(W): Σ (φφᵀ ⊗ P) vec(W) = Σ φ ⊗ P ẋ.
    let dim = n * p;
    let mut lhs = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for i in 0..prep.phi.len() {
        let phi = &prep.phi[i];
        let pm = match prep.iso {
            Some(s) => DMatrix::identity(n, n) * s,
            None => prep.prec[i].clone(),
        };
        let px = &pm * &prep.xdot[i];
        for a in 0..p {
            for b in 0..p {
                let f = phi[a] * phi[b];
                if f == 0.0 {
                    continue;
                }
                let mut blk = lhs.view_mut((a * n, b * n), (n, n));
                blk += &pm * f;
            }
            let mut seg = rhs.rows_mut(a * n, n);
            seg += &px * phi[a];
        }
    }
    let chol = lhs
        .cholesky()
        .ok_or_else(|| contract("weighted normal equations are not positive definite"))?;
    let w = chol.solve(&rhs);
    Ok(LearnedDynamics {
        basis: basis.clone(),
        weights: DMatrix::from_column_slice(n, p, w.as_slice()),
    })
}

/// Indices whose Schur-complement pivot in a left-to-right Cholesky is
/// negligible relative to the original diagonal.
fn dependent_columns(gram: &DMatrix<f64>) -> Vec<usize> {
    let p = gram.nrows();
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut kept: Vec<usize> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..p {
        let mut col = DVector::zeros(p);
        for i in j..p {
            let mut v = gram[(i, j)];
            for &k in &kept {
                v -= l[(i, k)] * l[(j, k)];
            }
            col[i] = v;
        }
        let diag = gram[(j, j)];
        if col[j] <= 1e-10 * diag.max(f64::MIN_POSITIVE) || diag <= 0.0 {
            bad.push(j);
            continue;
        }
        let d = col[j].sqrt();
        for i in j..p {
            l[(i, j)] = col[i] / d;
        }
        kept.push(j);
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::DataPoint;

    fn point(x: f64, xdot: f64, s: f64) -> DataPoint {
        DataPoint {
            x: DVector::from_vec(vec![x]),
            u: DVector::zeros(0),
            xdot: DVector::from_vec(vec![xdot]),
            sigma: DMatrix::from_element(1, 1, s),
        }
    }

    /// Features `[1, x]`.
    fn slope_basis() -> Basis {
        Basis::new(1, vec![0], vec![0.0], vec![1.0], 0).unwrap()
    }

    #[test]
    fn loss_single_residual() {
        let b = Basis::new(0, vec![], vec![], vec![], 0).unwrap();
        let m = LearnedDynamics {
            basis: b,
            weights: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        };
        let data = Dataset {
            points: vec![DataPoint {
                x: DVector::zeros(2),
                u: DVector::zeros(0),
                xdot: DVector::zeros(2),
                sigma: DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
            }],
        };
        assert!((loss(&m, &data).unwrap() - 0.25).abs() < 1e-15);
        let mut bad = data.clone();
        bad.points[0].sigma = DMatrix::zeros(2, 2);
        let err = loss(&m, &bad).unwrap_err();
        assert!(err.to_string().contains("data point 0"));
    }

    #[test]
    fn two_point_least_squares() {
        // Fit ẋ = a + b x through (1, 2) and (3, 6): a = 0, b = 2.
        let data = Dataset {
            points: vec![point(1.0, 2.0, 1.0), point(3.0, 6.0, 1.0)],
        };
        let m = fit_wls_closed_form(&data, &slope_basis()).unwrap();
        assert!((m.weights[(0, 0)]).abs() < 1e-12);
        assert!((m.weights[(0, 1)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_weighting_semantics() {
        let base = vec![point(0.0, 1.0, 1.0), point(1.0, 0.5, 1.0), point(2.0, 2.5, 1.0)];
        // One extra copy at double weight against two extra copies at unit weight.
        let mut dup = base.clone();
        dup.push(point(2.0, 2.5, 0.5));
        let mut tri = base.clone();
        tri.push(point(2.0, 2.5, 1.0));
        tri.push(point(2.0, 2.5, 1.0));
        let a = fit_wls_closed_form(&Dataset { points: dup }, &slope_basis()).unwrap();
        let b = fit_wls_closed_form(&Dataset { points: tri }, &slope_basis()).unwrap();
        assert!((a.weights - b.weights).amax() < 1e-12);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let data = Dataset {
            points: vec![point(1.0, 2.0, 1.0), point(1.0, 3.0, 1.0)],
        };
        match fit_wls_closed_form(&data, &slope_basis()) {
            Err(Error::RankDeficient { features }) => assert_eq!(features, vec![1]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn gd_recovers_realizable_model() {
        let data = Dataset {
            points: (0..20).map(|i| {
                let x = i as f64 / 10.0 - 1.0;
                point(x, 0.3 - 1.5 * x, 1.0)
            }).collect(),
        };
        let cfg = GdConfig {
            steps: 5000,
            tol: 1e-15,
            ..GdConfig::default()
        };
        let (m, trace) = fit_gd(&data, &slope_basis(), &cfg, None).unwrap();
        assert!(trace.last().unwrap().loss <= 1e-10);
        assert!((m.weights[(0, 0)] - 0.3).abs() < 1e-5);
        assert!((m.weights[(0, 1)] + 1.5).abs() < 1e-5);
        assert!(trace.windows(2).all(|w| w[1].loss <= w[0].loss * (1.0 + 1e-12)));
    }
}
