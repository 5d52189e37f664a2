//! Lipschitz estimate, tube radius and the resulting margin budget on the grid model.

use nalgebra::DVector;

use bundlesafe::envs::grid;
use bundlesafe::geometry::{estimate_lipschitz, process_gain_bound, safety_margin_lower_bound, UncertaintyTube};
use bundlesafe::math::rng_from_seed;

fn main() -> bundlesafe::Result<()> {
    let env = grid::default_spec();
    let mut rng = rng_from_seed(1);
    let u = DVector::zeros(env.control_dim());
    let l_f = estimate_lipschitz(&env, &u, 500, &mut rng)?;
    let tube = UncertaintyTube::new(l_f, process_gain_bound(&env), 0.5)?;
    println!("L_f ≈ {l_f:.3}, L_g = {}", tube.l_g);
    for t in [0.1, 0.5, 1.0, 2.0] {
        let r = tube.radius(t);
        let margin = safety_margin_lower_bound(0.3, 1.0, 0.01, tube.gamma_b(1.0, t));
        println!("t = {t:3.1} s: radius {r:.4e}, margin left from b_min 0.3: {margin:+.4}");
    }
    Ok(())
}
