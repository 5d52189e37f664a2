//! Finite-difference search over linear feedback for the 1-D system, with
//! every rollout passed through the safety filter.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use bundlesafe::envs::integrator;
use bundlesafe::learning::{optimize_policy, PolicyConfig, PolicyParams};
use bundlesafe::math::SimRng;
use bundlesafe::safety::filter::Mcbf;

fn main() -> bundlesafe::Result<()> {
    let env = integrator::default_spec();
    let mcbf = Mcbf::for_env(&env, 0.0, 2.0);
    // Track 0.95, just inside the certified band.
    let cost = |x: &DVector<f64>, u: &DVector<f64>| (x[0] - 0.95).powi(2) + 0.01 * u[0] * u[0];
    let start = |r: &mut SimRng| DVector::from_element(1, r.random_range(-0.5..0.5));
    let cfg = PolicyConfig {
        iters: 40,
        fd_step: 1e-2,
        step_size: 0.01,
        discount: 0.98,
        horizon: 80,
        n_rollouts: 16,
        delta_w: 0.0,
        seed: 4,
    };
    let p0 = PolicyParams {
        gains: DMatrix::from_element(1, 1, -0.5),
        bias: DVector::zeros(1),
    };
    let out = optimize_policy(&env, &p0, &cost, Some(&mcbf), &start, &cfg)?;
    println!("cost {:.4} → {:.4}", out.history[0], out.cost);
    println!("policy u = {:.3}·x + {:.3}", out.params.gains[(0, 0)], out.params.bias[0]);
    Ok(())
}
