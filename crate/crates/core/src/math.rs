//! Small dense linear-algebra and sampling helpers shared across modules.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use sha2::{Digest, Sha256};

pub type State = DVector<f64>;

/// Random stream used throughout the simulator.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Nearest rotation in Frobenius norm via the polar factor `U Vᵀ`.
///
/// Falls back to Gram–Schmidt on the columns when the SVD does not converge.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.try_svd(true, true, 1e-15, 200);
    if let Some(svd) = svd {
        if let (Some(u), Some(v_t)) = (svd.u, svd.v_t) {
            let mut r = u * v_t;
            if r.determinant() < 0.0 {
                let mut u = u;
                u.column_mut(2).neg_mut();
                r = u * v_t;
            }
            return r;
        }
    }
    gram_schmidt(m)
}

pub fn gram_schmidt(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = m.column(0).normalize();
    let c1 = (m.column(1) - c0 * c0.dot(&m.column(1))).normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

/// Angle of the rotation `R` in radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Central-difference Jacobian of `f` at `x` with absolute step `step`.
///
/// Divides by the representable width of the stencil, so coordinates that
/// `f` passes through unchanged differentiate to exactly one.
pub fn jacobian_fd<F>(f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.clone();
    for j in 0..n {
        xp[j] = x[j] + step;
        let up = xp[j];
        let fp = f(&xp);
        xp[j] = x[j] - step;
        let width = up - xp[j];
        let fm = f(&xp);
        xp[j] = x[j];
        cols.push((fp - fm) / width);
    }
    if cols.is_empty() {
        return DMatrix::zeros(f(x).len(), 0);
    }
    DMatrix::from_columns(&cols)
}

/// Central-difference gradient of a scalar function.
pub fn gradient_fd<F>(f: F, x: &DVector<f64>, step: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        xp[j] = x[j] + step;
        let up = xp[j];
        let fp = f(&xp);
        xp[j] = x[j] - step;
        let width = up - xp[j];
        let fm = f(&xp);
        xp[j] = x[j];
        g[j] = (fp - fm) / width;
    }
    g
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn uniform_in_box<R: Rng + ?Sized>(bounds: &[(f64, f64)], rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(
        bounds.len(),
        bounds.iter().map(|&(lo, hi)| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        }),
    )
}

/// Uniform direction on the unit sphere in `n` dimensions.
pub fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    use rand_distr::StandardNormal;
    loop {
        let v = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Deterministic 64-bit seed from a base seed, a label and an index.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let out = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&out[..8]);
    u64::from_le_bytes(bytes)
}

/// `%g`-style formatting with `sig` significant digits.
pub fn fmt_sig(v: f64, sig: usize) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..(sig as i32)).contains(&exp) {
        let s = format!("{:.*e}", sig.saturating_sub(1), v);
        // trim mantissa zeros: 1.50000000e3 -> 1.5e3
        if let Some((mant, e)) = s.split_once('e') {
            let mant = if mant.contains('.') {
                mant.trim_end_matches('0').trim_end_matches('.')
            } else {
                mant
            };
            return format!("{mant}e{e}");
        }
        return s;
    }
    let decimals = (sig as i32 - 1 - exp).max(0) as usize;
    let s = format!("{:.*}", decimals, v);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Rounds to `sig` significant digits, for JSON output.
pub fn round_sig(v: f64, sig: usize) -> f64 {
    fmt_sig(v, sig).parse().unwrap_or(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polar_projection_restores_orthonormality() {
        let m = Matrix3::new(1.01, 0.02, 0.0, -0.01, 0.99, 0.03, 0.0, -0.02, 1.0);
        let r = project_to_rotation(&m);
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        assert!(err < 1e-14);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vee_inverts_skew() {
        let w = Vector3::new(0.3, -1.2, 2.0);
        assert_eq!(vee(&skew(&w)), w);
    }

    #[test]
    fn sig_formatting() {
        assert_eq!(fmt_sig(0.1333333333333, 9), "0.133333333");
        assert_eq!(fmt_sig(66.666666666, 9), "66.6666667");
        assert_eq!(fmt_sig(2.0, 9), "2");
        assert_eq!(fmt_sig(1.5e-7, 9), "1.5e-7");
        assert_eq!(fmt_sig(-0.25, 9), "-0.25");
    }

    #[test]
    fn derived_seeds_differ_by_index_and_label() {
        let a = derive_seed(7, "cfg", 0);
        assert_eq!(a, derive_seed(7, "cfg", 0));
        assert_ne!(a, derive_seed(7, "cfg", 1));
        assert_ne!(a, derive_seed(7, "cfh", 0));
    }
}
