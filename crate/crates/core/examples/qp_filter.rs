//! One filter step by hand: rows of the mCBF condition and the QP correction.

use nalgebra::DVector;

use bundlesafe::envs::integrator;
use bundlesafe::safety::filter::{filter_rows, mcbf_value, safety_filter, Mcbf};

fn main() {
    let env = integrator::default_spec();
    let mcbf = Mcbf::for_env(&env, 0.5, 2.0);
    let x_est = DVector::from_vec(vec![0.85]);
    let u_nom = DVector::from_vec(vec![1.0]);

    for residual in [0.0, 0.05, 0.2] {
        let y = &x_est + DVector::from_vec(vec![residual]);
        let (a, c) = filter_rows(&env, &mcbf, &x_est, &y, 0.0);
        let (u, diag) = safety_filter(&env, &mcbf, &x_est, &y, &u_nom, 0.0);
        println!(
            "residual {residual:.2}: b = {:+.3}, rows {} u >= {}, u = {:+.4} (feasible {}, active {:?})",
            mcbf_value(&mcbf, &x_est, &y, env.measurement.as_ref()),
            a.iter().map(|v| format!("{v:+.2}")).collect::<Vec<_>>().join(" "),
            c.iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>().join(" "),
            u[0],
            diag.feasible,
            diag.active
        );
    }
}
