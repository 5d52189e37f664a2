//! Least-distance QP with affine inequality rows and a box:
//!
//! ```text
//! min ‖u − u₀‖²   s.t.  A u ≥ c,  lo ≤ u ≤ hi
//! ```
//!
//! Solved as a least-distance program through Lawson–Hanson NNLS, followed by
//! an equality-constrained polish on the detected active set. A single violated
//! row is handled in closed form.

use nalgebra::{DMatrix, DVector};

/// Rows whose normalized slack is above `-FEAS_TOL` count as satisfied.
pub const FEAS_TOL: f64 = 1e-9;

/// Coefficient of the uniform slack variable in the infeasible fallback; the
/// slack costs `1/RELAX_WEIGHT²` times more than the control correction.
const RELAX_WEIGHT: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub feasible: bool,
    /// Indices of inequality rows (not box faces) active at the solution.
    pub active: Vec<usize>,
    /// Smallest normalized row slack `(aᵢ·u − cᵢ)/‖aᵢ‖` at the solution.
    pub min_slack: f64,
}

fn row_norms(a: &DMatrix<f64>) -> Vec<f64> {
    (0..a.nrows()).map(|i| a.row(i).norm()).collect()
}

/// Normalized slacks; rows without control authority report raw `−cᵢ`.
pub fn slacks(a: &DMatrix<f64>, c: &DVector<f64>, u: &DVector<f64>) -> Vec<f64> {
    let norms = row_norms(a);
    (0..a.nrows())
        .map(|i| {
            let s = a.row(i).dot(&u.transpose()) - c[i];
            if norms[i] > 1e-12 {
                s / norms[i]
            } else {
                s
            }
        })
        .collect()
}

fn in_box(u: &DVector<f64>, bounds: &[(f64, f64)]) -> bool {
    bounds
        .iter()
        .enumerate()
        .all(|(i, &(lo, hi))| u[i] >= lo - FEAS_TOL && u[i] <= hi + FEAS_TOL)
}

fn clamp(u: &DVector<f64>, bounds: &[(f64, f64)]) -> DVector<f64> {
    DVector::from_iterator(u.len(), bounds.iter().enumerate().map(|(i, &(lo, hi))| u[i].clamp(lo, hi)))
}

/// Lawson–Hanson non-negative least squares `min ‖E w − f‖, w ≥ 0`.
pub fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    let m = e.ncols();
    let mut x = DVector::zeros(m);
    let mut passive = vec![false; m];
    let scale = e.amax().max(1.0) * f.amax().max(1.0);
    let tol = 1e-13 * scale * (m.max(1) as f64);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let mut s = DVector::zeros(m);
        if idx.is_empty() {
            return s;
        }
        let sub = DMatrix::from_fn(e.nrows(), idx.len(), |r, k| e[(r, idx[k])]);
        let normal = sub.transpose() * &sub;
        let dominant = normal.diagonal().amax();
        let chol = normal
            .cholesky()
            .filter(|c| c.l_dirty().diagonal().amin().powi(2) > 1e-10 * dominant);
        let sol = match chol {
            Some(c) => c.solve(&(sub.transpose() * f)),
            None => sub
                .svd(true, true)
                .solve(f, 1e-14)
                .unwrap_or_else(|_| DVector::zeros(idx.len())),
        };
        for (k, &j) in idx.iter().enumerate() {
            s[j] = sol[k];
        }
        s
    };
    for _outer in 0..(3 * m + 10) {
        let w = e.transpose() * (f - e * &x);
        let mut best = None;
        for j in 0..m {
            if !passive[j] && w[j] > tol && best.is_none_or(|(_, bw)| w[j] > bw) {
                best = Some((j, w[j]));
            }
        }
        let Some((t, _)) = best else { break };
        passive[t] = true;
        let mut inner = 0;
        loop {
            inner += 1;
            let s = solve_passive(&passive);
            let bad: Vec<usize> = (0..m).filter(|&j| passive[j] && s[j] <= 0.0).collect();
            if bad.is_empty() || inner > 3 * m + 10 {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &j in &bad {
                let d = x[j] - s[j];
                if d > 0.0 {
                    alpha = alpha.min(x[j] / d);
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x = &x + (&s - &x) * alpha;
            for j in 0..m {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    x
}

/// Least-distance program `min ‖z‖ s.t. G z ≥ h`. Returns `None` if infeasible.
/// Also returns the NNLS multipliers.
pub fn ldp(g: &DMatrix<f64>, h: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = g.ncols();
    let m = g.nrows();
    if h.iter().all(|v| *v <= 0.0) {
        return Some((DVector::zeros(n), DVector::zeros(m)));
    }
    let mut e = DMatrix::zeros(n + 1, m);
    for j in 0..m {
        for i in 0..n {
            e[(i, j)] = g[(j, i)];
        }
        e[(n, j)] = h[j];
    }
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;
    let w = nnls(&e, &f);
    let r = &e * &w - &f;
    if r.norm() < 1e-12 || r[n] > -1e-14 {
        return None;
    }
    let z = DVector::from_iterator(n, (0..n).map(|i| -r[i] / r[n]));
    // Nearly dependent rows can make the dual residual unreliable.
    let scale = 1.0 + h.amax();
    if (0..m).any(|j| g.row(j).dot(&z.transpose()) - h[j] < -1e-9 * scale) {
        return None;
    }
    Some((z, w))
}

struct Stacked {
    g: DMatrix<f64>,
    h: DVector<f64>,
}

fn stack(a: &DMatrix<f64>, c: &DVector<f64>, norms: &[f64], keep: &[bool], bounds: &[(f64, f64)], u0: &DVector<f64>, lift: f64) -> Stacked {
    let n = u0.len();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..a.nrows() {
        if !keep[i] {
            continue;
        }
        let ai = a.row(i).transpose() / norms[i];
        let hi = (c[i] - a.row(i).dot(&u0.transpose())) / norms[i] + lift;
        rows.push(ai);
        rhs.push(hi);
    }
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        if lo.is_finite() {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            rows.push(e);
            rhs.push(lo - u0[j]);
        }
        if hi.is_finite() {
            let mut e = DVector::zeros(n);
            e[j] = -1.0;
            rows.push(e);
            rhs.push(u0[j] - hi);
        }
    }
    let g = if rows.is_empty() {
        DMatrix::zeros(0, n)
    } else {
        DMatrix::from_fn(rows.len(), n, |r, k| rows[r][k])
    };
    Stacked {
        g,
        h: DVector::from_vec(rhs),
    }
}

/// Re-solves `min ‖z‖` with the active rows as equalities for extra accuracy.
fn polish(st: &Stacked, z: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let act: Vec<usize> = (0..st.g.nrows())
        .filter(|&i| w[i] > 0.0 || (st.g.row(i).dot(&z.transpose()) - st.h[i]).abs() < 1e-10)
        .collect();
    if act.is_empty() {
        return z.clone();
    }
    let ga = DMatrix::from_fn(act.len(), z.len(), |r, k| st.g[(act[r], k)]);
    let ha = DVector::from_iterator(act.len(), act.iter().map(|&i| st.h[i]));
    let Ok(zp) = ga.clone().svd(true, true).solve(&ha, 1e-13) else {
        return z.clone();
    };
    let worst = (0..st.g.nrows())
        .map(|i| st.g.row(i).dot(&zp.transpose()) - st.h[i])
        .fold(f64::INFINITY, f64::min);
    if worst >= -1e-13 && zp.norm() <= z.norm() + 1e-9 {
        zp
    } else {
        z.clone()
    }
}

fn finish(a: &DMatrix<f64>, c: &DVector<f64>, u: DVector<f64>, feasible: bool) -> QpSolution {
    let s = slacks(a, c, &u);
    let active = (0..s.len()).filter(|&i| s[i].abs() <= 1e-7).collect();
    let min_slack = s.iter().copied().fold(f64::INFINITY, f64::min);
    QpSolution {
        u,
        feasible,
        active,
        min_slack,
    }
}

/// Solves the box-constrained least-distance QP.
///
/// If the rows cannot be satisfied inside the box, relaxes them by a shared
/// slack (heavily penalized) and returns the clamped minimizer with
/// `feasible = false`.
pub fn solve(a: &DMatrix<f64>, c: &DVector<f64>, bounds: &[(f64, f64)], u_nom: &DVector<f64>) -> QpSolution {
    let n = u_nom.len();
    assert_eq!(a.ncols(), n, "row width must match control dimension");
    assert_eq!(bounds.len(), n, "one bound per control");
    let norms = row_norms(a);
    let keep: Vec<bool> = norms.iter().map(|v| *v > 1e-12).collect();
    // Rows without authority are satisfied or not regardless of u.
    let dead_violated = (0..a.nrows()).any(|i| !keep[i] && -c[i] < -FEAS_TOL);

    let s_nom = slacks(a, c, u_nom);
    let violated: Vec<usize> = (0..a.nrows()).filter(|&i| keep[i] && s_nom[i] < -FEAS_TOL).collect();
    let nom_in_box = in_box(u_nom, bounds);
    if violated.is_empty() && nom_in_box {
        return finish(a, c, u_nom.clone(), !dead_violated);
    }
    if violated.len() == 1 && nom_in_box {
        let i = violated[0];
        let ai = a.row(i).transpose();
        let u = u_nom + &ai * ((c[i] - ai.dot(u_nom)) / (norms[i] * norms[i]));
        let ok = in_box(&u, bounds) && slacks(a, c, &u).iter().enumerate().all(|(j, s)| !keep[j] || *s >= -FEAS_TOL);
        if ok {
            return finish(a, c, u, !dead_violated);
        }
    }

    let st = stack(a, c, &norms, &keep, bounds, u_nom, 0.0);
    if let Some((z, w)) = ldp(&st.g, &st.h) {
        let z = polish(&st, &z, &w);
        let u = clamp(&(u_nom + z), bounds);
        return finish(a, c, u, !dead_violated);
    }

    // Infeasible: one extra variable lifts every row uniformly, weighted so
    // heavily that the solution approaches the largest achievable slack.
    let rows = st.g.nrows();
    let mut g = DMatrix::zeros(rows, n + 1);
    g.view_mut((0, 0), (rows, n)).copy_from(&st.g);
    let n_rows = keep.iter().filter(|k| **k).count();
    for r in 0..n_rows {
        g[(r, n)] = RELAX_WEIGHT;
    }
    match ldp(&g, &st.h) {
        Some((z, _)) => {
            let u = clamp(&(u_nom + z.rows(0, n)), bounds);
            finish(a, c, u, false)
        }
        None => finish(a, c, clamp(u_nom, bounds), false),
    }
}
