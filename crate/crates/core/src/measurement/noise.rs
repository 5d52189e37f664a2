//! Measurement uncertainty patterns with carried state.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::MeasurementMap;
use crate::error::{contract, Result};
use crate::math::SimRng;

/// Gaussian samples are truncated at this many standard deviations
/// (Mahalanobis norm), so `δ_v = 3σ`.
pub const TRUNCATION: f64 = 3.0;

/// Failure durations are capped at this multiple of the mean duration.
pub const FAILURE_CAP: f64 = 10.0;

fn default_mean_duration() -> f64 {
    10.0
}

/// Sequence-valued noise models. Vector parameters of length one are
/// broadcast to every channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", content = "params", rename_all = "snake_case")]
pub enum NoisePattern {
    None,
    Gaussian {
        sigma: Vec<f64>,
    },
    FixedBias {
        b: Vec<f64>,
    },
    /// Additive `λ·t` on every channel.
    DriftingBias {
        lambda: f64,
    },
    /// Per-channel `|vᵢ| ≤ γ·|zᵢ − anchorᵢ|` where `z` is the input signal.
    ProportionalGaussian {
        gamma: f64,
        #[serde(default)]
        anchor: Vec<f64>,
    },
    /// Exact-exponential discretization of `ẏ = (z − y)/τ + v`, with `v`
    /// drawn from `inner` applied to a zero signal.
    FirstOrderDelay {
        tau: f64,
        inner: Box<NoisePattern>,
    },
    /// Stuck-at-last-value failures starting with probability `p_fail` per
    /// call and lasting a geometric number of calls.
    SensorFailure {
        p_fail: f64,
        #[serde(default = "default_mean_duration")]
        mean_duration: f64,
        inner: Box<NoisePattern>,
    },
    /// Patterns applied in sequence; each receives the previous output.
    Compound(Vec<NoisePattern>),
}

fn broadcast(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

/// Context for worst-case bounds that depend on the signal.
#[derive(Clone, Copy, Debug)]
pub struct BoundContext<'a> {
    /// The ideal measurement `h(x)` at the time of interest.
    pub ideal: &'a DVector<f64>,
    pub t: f64,
    pub dt: f64,
    /// Bound on `‖dh(x(t))/dt‖` along trajectories.
    pub rate: f64,
}

impl NoisePattern {
    pub fn gaussian(sigma: f64) -> Self {
        NoisePattern::Gaussian { sigma: vec![sigma] }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, NoisePattern::None)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let check_len = |v: &[f64], what: &str| {
            if v.len() == 1 || v.len() == dim {
                Ok(())
            } else {
                Err(contract(format!(
                    "{what} has {} entries for a {dim}-channel measurement",
                    v.len()
                )))
            }
        };
        match self {
            NoisePattern::None | NoisePattern::DriftingBias { .. } => Ok(()),
            NoisePattern::Gaussian { sigma } => {
                check_len(sigma, "sigma")?;
                if sigma.iter().any(|s| *s < 0.0) {
                    return Err(contract("negative sigma"));
                }
                Ok(())
            }
            NoisePattern::FixedBias { b } => check_len(b, "bias"),
            NoisePattern::ProportionalGaussian { gamma, anchor } => {
                if *gamma < 0.0 {
                    return Err(contract("negative gamma"));
                }
                if anchor.is_empty() {
                    Ok(())
                } else {
                    check_len(anchor, "anchor")
                }
            }
            NoisePattern::FirstOrderDelay { tau, inner } => {
                if !(*tau > 0.0) {
                    return Err(contract("delay time constant must be positive"));
                }
                inner.validate(dim)
            }
            NoisePattern::SensorFailure {
                p_fail,
                mean_duration,
                inner,
            } => {
                if !(0.0..=1.0).contains(p_fail) || *mean_duration < 1.0 {
                    return Err(contract("sensor failure needs p_fail in [0,1] and mean_duration ≥ 1"));
                }
                inner.validate(dim)
            }
            NoisePattern::Compound(list) => list.iter().try_for_each(|p| p.validate(dim)),
        }
    }

    /// Declared worst case of `‖y − h(x)‖` for the pattern.
    ///
    /// Delay: the lag error of a signal changing at most at `rate` is bounded
    /// by `τ·rate`, and the integrated inner noise by `Δt/(1 − e^{−Δt/τ})·δ_inner`.
    /// Failure: while stuck the discrepancy grows at most by `rate` per second
    /// for at most `FAILURE_CAP·mean_duration` calls.
    pub fn bound(&self, ctx: &BoundContext<'_>) -> f64 {
        let n = ctx.ideal.len();
        match self {
            NoisePattern::None => 0.0,
            NoisePattern::Gaussian { sigma } => {
                TRUNCATION * (0..n).map(|i| broadcast(sigma, i)).fold(0.0, f64::max)
            }
            NoisePattern::FixedBias { b } => (0..n)
                .map(|i| broadcast(b, i).powi(2))
                .sum::<f64>()
                .sqrt(),
            NoisePattern::DriftingBias { lambda } => lambda.abs() * ctx.t * (n as f64).sqrt(),
            NoisePattern::ProportionalGaussian { gamma, anchor } => {
                gamma
                    * (0..n)
                        .map(|i| {
                            let a = if anchor.is_empty() { 0.0 } else { broadcast(anchor, i) };
                            (ctx.ideal[i] - a).powi(2)
                        })
                        .sum::<f64>()
                        .sqrt()
            }
            NoisePattern::FirstOrderDelay { tau, inner } => {
                let zero = DVector::zeros(n);
                let inner_b = inner.bound(&BoundContext {
                    ideal: &zero,
                    ..*ctx
                });
                let gain = ctx.dt / (1.0 - (-ctx.dt / tau).exp());
                tau * ctx.rate + gain * inner_b
            }
            NoisePattern::SensorFailure {
                mean_duration,
                inner,
                ..
            } => inner.bound(ctx) + ctx.rate * ctx.dt * (FAILURE_CAP * mean_duration).ceil(),
            NoisePattern::Compound(list) => list.iter().map(|p| p.bound(ctx)).sum(),
        }
    }
}

/// Carried state mirroring the pattern tree.
#[derive(Clone, Debug)]
enum Carry {
    Stateless,
    Delay {
        y: Option<DVector<f64>>,
        t: f64,
        inner: Box<Carry>,
    },
    Failure {
        remaining: usize,
        last: Option<DVector<f64>>,
        inner: Box<Carry>,
    },
    Compound(Vec<Carry>),
}

impl Carry {
    fn for_pattern(p: &NoisePattern) -> Self {
        match p {
            NoisePattern::FirstOrderDelay { inner, .. } => Carry::Delay {
                y: None,
                t: 0.0,
                inner: Box::new(Carry::for_pattern(inner)),
            },
            NoisePattern::SensorFailure { inner, .. } => Carry::Failure {
                remaining: 0,
                last: None,
                inner: Box::new(Carry::for_pattern(inner)),
            },
            NoisePattern::Compound(list) => Carry::Compound(list.iter().map(Carry::for_pattern).collect()),
            _ => Carry::Stateless,
        }
    }
}

fn truncated_standard(n: usize, rng: &mut SimRng) -> DVector<f64> {
    for _ in 0..10_000 {
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        if z.norm() <= TRUNCATION {
            return z;
        }
    }
    // Only reachable in very high dimension; fall back to radial clipping.
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let nz = z.norm();
    z * (TRUNCATION / nz)
}

fn truncated_scalar(rng: &mut SimRng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= TRUNCATION {
            return z;
        }
    }
}

fn apply(p: &NoisePattern, carry: &mut Carry, z: &DVector<f64>, t: f64, rng: &mut SimRng) -> DVector<f64> {
    let n = z.len();
    match (p, carry) {
        (NoisePattern::None, _) => z.clone(),
        (NoisePattern::Gaussian { sigma }, _) => {
            if sigma.iter().all(|s| *s == 0.0) {
                return z.clone();
            }
            let e = truncated_standard(n, rng);
            DVector::from_iterator(n, (0..n).map(|i| z[i] + broadcast(sigma, i) * e[i]))
        }
        (NoisePattern::FixedBias { b }, _) => DVector::from_iterator(n, (0..n).map(|i| z[i] + broadcast(b, i))),
        (NoisePattern::DriftingBias { lambda }, _) => z.add_scalar(lambda * t),
        (NoisePattern::ProportionalGaussian { gamma, anchor }, _) => DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let a = if anchor.is_empty() { 0.0 } else { broadcast(anchor, i) };
                let bound = gamma * (z[i] - a).abs();
                if bound == 0.0 {
                    z[i]
                } else {
                    z[i] + bound / TRUNCATION * truncated_scalar(rng)
                }
            }),
        ),
        (
            NoisePattern::FirstOrderDelay { tau, inner },
            Carry::Delay {
                y,
                t: t_last,
                inner: inner_carry,
            },
        ) => {
            let out = match y.take() {
                None => z.clone(),
                Some(prev) => {
                    let dt = t - *t_last;
                    let a = 1.0 - (-dt / tau).exp();
                    let zero = DVector::zeros(n);
                    let v = apply(inner, inner_carry, &zero, t, rng);
                    &prev + (z - &prev) * a + v * dt
                }
            };
            *t_last = t;
            *y = Some(out.clone());
            out
        }
        (
            NoisePattern::SensorFailure {
                p_fail,
                mean_duration,
                inner,
            },
            Carry::Failure {
                remaining,
                last,
                inner: inner_carry,
            },
        ) => {
            if *remaining > 0 {
                *remaining -= 1;
                return last.clone().expect("failure state without a last value");
            }
            if *p_fail > 0.0 && last.is_some() && rng.random::<f64>() < *p_fail {
                let q = 1.0 / mean_duration;
                let d = if q >= 1.0 {
                    1.0
                } else {
                    let u: f64 = 1.0 - rng.random::<f64>();
                    (u.ln() / (1.0 - q).ln()).ceil().max(1.0)
                };
                let d = d.min((FAILURE_CAP * mean_duration).ceil()) as usize;
                *remaining = d - 1;
                return last.clone().unwrap();
            }
            let out = apply(inner, inner_carry, z, t, rng);
            *last = Some(out.clone());
            out
        }
        (NoisePattern::Compound(list), Carry::Compound(carries)) => {
            let mut cur = z.clone();
            for (p, c) in list.iter().zip(carries.iter_mut()) {
                cur = apply(p, c, &cur, t, rng);
            }
            cur
        }
        _ => unreachable!("carry state does not match pattern"),
    }
}

/// Ideal map plus a noise pattern and its per-episode carried state.
///
/// A model instance belongs to one episode; clone a fresh one (or call
/// [`MeasurementModel::reset`]) for each rollout.
#[derive(Clone)]
pub struct MeasurementModel {
    pub map: Arc<dyn MeasurementMap>,
    pub pattern: NoisePattern,
    carry: Carry,
    last_t: Option<f64>,
}

impl std::fmt::Debug for MeasurementModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MeasurementModel")
            .field("pattern", &self.pattern)
            .field("last_t", &self.last_t)
            .finish()
    }
}

impl MeasurementModel {
    pub fn new(map: Arc<dyn MeasurementMap>, pattern: NoisePattern) -> Result<Self> {
        pattern.validate(map.output_dim())?;
        let carry = Carry::for_pattern(&pattern);
        Ok(Self {
            map,
            pattern,
            carry,
            last_t: None,
        })
    }

    pub fn noiseless(map: Arc<dyn MeasurementMap>) -> Self {
        Self::new(map, NoisePattern::None).expect("none pattern is always valid")
    }

    pub fn reset(&mut self) {
        self.carry = Carry::for_pattern(&self.pattern);
        self.last_t = None;
    }

    pub fn ideal_measure(&self, x: &DVector<f64>) -> DVector<f64> {
        self.map.measure(x)
    }

    /// Emits `y` at time `t` and advances the carried state.
    pub fn measure(&mut self, x: &DVector<f64>, t: f64, rng: &mut SimRng) -> Result<DVector<f64>> {
        if let Some(prev) = self.last_t {
            if t < prev {
                return Err(contract(format!("measurement time went backwards: {t} < {prev}")));
            }
        }
        self.last_t = Some(t);
        let z = self.map.measure(x);
        Ok(apply(&self.pattern, &mut self.carry, &z, t, rng))
    }

    pub fn declared_bound(&self, ctx: &BoundContext<'_>) -> f64 {
        self.pattern.bound(ctx)
    }
}

/// Names of the generic uncertainty-pattern presets.
pub const PRESET_NAMES: [&str; 7] = [
    "gaussian_0.1",
    "gaussian_0.3",
    "fixed_bias_0.2",
    "time_varying_bias",
    "delay_50ms",
    "delay_100ms",
    "sensor_failure",
];

/// Generic preset by name; biases are in the measurement's native units.
pub fn preset(name: &str) -> Option<NoisePattern> {
    use NoisePattern::*;
    let g = |s: f64| Gaussian { sigma: vec![s] };
    let delay = |tau: f64| Compound(vec![
        FirstOrderDelay {
            tau,
            inner: Box::new(None),
        },
        g(0.1),
    ]);
    Some(match name {
        "none" => None,
        "gaussian_0.1" => g(0.1),
        "gaussian_0.3" => g(0.3),
        "fixed_bias_0.2" => Compound(vec![g(0.1), FixedBias { b: vec![0.2] }]),
        "time_varying_bias" => Compound(vec![g(0.1), DriftingBias { lambda: 0.005 }]),
        "delay_50ms" => delay(0.05),
        "delay_100ms" => delay(0.1),
        "sensor_failure" => SensorFailure {
            p_fail: 0.01,
            mean_duration: 10.0,
            inner: Box::new(g(0.1)),
        },
        _ => return Option::None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng_from_seed;
    use crate::measurement::Selection;

    fn ident(n: usize) -> Arc<dyn MeasurementMap> {
        Arc::new(Selection::identity(n))
    }

    #[test]
    fn zero_sigma_is_exact() {
        let mut m = MeasurementModel::new(ident(3), NoisePattern::gaussian(0.0)).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let mut rng = rng_from_seed(1);
        assert_eq!(m.measure(&x, 0.0, &mut rng).unwrap(), x);
    }

    #[test]
    fn lag_step_response() {
        let pat = NoisePattern::FirstOrderDelay {
            tau: 5.0,
            inner: Box::new(NoisePattern::None),
        };
        let mut m = MeasurementModel::new(ident(1), pat).unwrap();
        let mut rng = rng_from_seed(1);
        let lo = DVector::from_vec(vec![0.0]);
        let hi = DVector::from_vec(vec![1.0]);
        m.measure(&lo, 0.0, &mut rng).unwrap();
        let mut y = DVector::zeros(1);
        for k in 1..=50 {
            y = m.measure(&hi, k as f64 * 0.1, &mut rng).unwrap();
        }
        assert!((y[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-3);
    }

    #[test]
    fn drift_at_ten_seconds() {
        let mut m = MeasurementModel::new(ident(1), NoisePattern::DriftingBias { lambda: 0.01 }).unwrap();
        let mut rng = rng_from_seed(1);
        let y = m.measure(&DVector::from_vec(vec![20.0]), 10.0, &mut rng).unwrap();
        assert!((y[0] - 20.1).abs() < 1e-12);
    }

    #[test]
    fn time_regression_rejected() {
        let mut m = MeasurementModel::noiseless(ident(1));
        let mut rng = rng_from_seed(1);
        let x = DVector::from_vec(vec![0.0]);
        m.measure(&x, 1.0, &mut rng).unwrap();
        assert!(m.measure(&x, 0.5, &mut rng).is_err());
    }

    #[test]
    fn failure_holds_last_value() {
        let pat = NoisePattern::SensorFailure {
            p_fail: 1.0,
            mean_duration: 3.0,
            inner: Box::new(NoisePattern::None),
        };
        let mut m = MeasurementModel::new(ident(1), pat).unwrap();
        let mut rng = rng_from_seed(9);
        let first = m.measure(&DVector::from_vec(vec![1.0]), 0.0, &mut rng).unwrap();
        let second = m.measure(&DVector::from_vec(vec![2.0]), 0.1, &mut rng).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn presets_roundtrip_through_json() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            let s = serde_json::to_string(&p).unwrap();
            let back: NoisePattern = serde_json::from_str(&s).unwrap();
            assert_eq!(p, back, "{s}");
        }
        let p: NoisePattern = serde_json::from_str(r#"{"pattern":"gaussian","params":{"sigma":[0.3]}}"#).unwrap();
        assert_eq!(p, NoisePattern::gaussian(0.3));
    }
}
