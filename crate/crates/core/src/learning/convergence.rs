//! Fit of `e(t) ≈ c₁ e^{−λ₁t} + plateau` to an error trace.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    pub c1: f64,
    pub lambda1: f64,
    pub plateau: f64,
    /// `plateau/δ_v`, when `δ_v > 0`.
    pub c2: Option<f64>,
    pub r2: f64,
    /// Number of leading trace points used by the log-linear fit.
    pub segment_len: usize,
}

/// Relative rise tolerated between consecutive points of the fitted segment.
const MONOTONE_TOL: f64 = 1e-3;

/// Plateau is the mean of the final 10% of `trace`. The exponential segment
/// runs from the start until the excess over the plateau first drops below
/// 1% of its initial value; `log(e − plateau)` is fit linearly there.
pub fn convergence_check(trace: &[f64], delta_v: f64) -> Result<ConvergenceFit> {
    if trace.len() < 50 {
        return Err(contract(format!(
            "convergence check needs at least 50 trace points, got {}",
            trace.len()
        )));
    }
    let tail = (trace.len() / 10).max(1);
    let plateau = trace[trace.len() - tail..].iter().sum::<f64>() / tail as f64;
    let e0 = trace[0] - plateau;
    let reject = |reason: String| Error::Optimization {
        reason,
        trace: trace.to_vec(),
    };
    if !(e0 > 0.0) {
        return Err(reject("trace starts at or below its plateau".into()));
    }
    let end = trace
        .iter()
        .position(|v| v - plateau <= 0.01 * e0)
        .unwrap_or(trace.len());
    if end < 3 {
        return Err(reject(format!("exponential segment too short ({end} points)")));
    }
    for k in 1..end {
        if trace[k] > trace[k - 1] * (1.0 + MONOTONE_TOL) + f64::EPSILON * trace[0] {
            return Err(reject(format!("trace rises at iteration {k} before reaching the plateau")));
        }
    }
    let pts: Vec<(f64, f64)> = (0..end).map(|k| (k as f64, (trace[k] - plateau).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(ConvergenceFit {
        c1: icpt.exp(),
        lambda1: -slope,
        plateau,
        c2: (delta_v > 0.0).then(|| plateau / delta_v),
        r2,
        segment_len: end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_synthetic_law() {
        let trace: Vec<f64> = (0..200).map(|t| 2.0 * (-0.1 * t as f64).exp() + 0.05).collect();
        let f = convergence_check(&trace, 0.1).unwrap();
        assert!((f.lambda1 - 0.1).abs() <= 0.01, "{f:?}");
        assert!((f.plateau - 0.05).abs() <= 0.005, "{f:?}");
        assert!(f.r2 > 0.99);
    }

    #[test]
    fn rejects_short_and_rising_traces() {
        assert!(convergence_check(&[1.0; 10], 0.1).is_err());
        let mut trace: Vec<f64> = (0..100).map(|t| (-0.1 * t as f64).exp()).collect();
        trace[5] = 3.0;
        assert!(matches!(convergence_check(&trace, 0.1), Err(Error::Optimization { .. })));
    }
}
