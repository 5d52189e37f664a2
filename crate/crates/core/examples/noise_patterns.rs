//! Every uncertainty preset applied to a moving signal, with the worst observed
//! error next to the declared bound.

use std::sync::Arc;

use nalgebra::DVector;

use bundlesafe::math::rng_from_seed;
use bundlesafe::measurement::{preset, BoundContext, MeasurementModel, Selection, PRESET_NAMES};

fn main() -> bundlesafe::Result<()> {
    let dt = 0.05;
    for name in PRESET_NAMES {
        let mut m = MeasurementModel::new(Arc::new(Selection::identity(1)), preset(name).unwrap())?;
        let mut rng = rng_from_seed(3);
        let (mut worst, mut bound) = (0.0f64, 0.0f64);
        for k in 0..400 {
            let t = k as f64 * dt;
            let x = DVector::from_vec(vec![t.sin()]);
            let y = m.measure(&x, t, &mut rng)?;
            worst = worst.max((y - &x).norm());
            bound = bound.max(m.declared_bound(&BoundContext { ideal: &x, t, dt, rate: 1.0 }));
        }
        println!("{name:<18} max |y - h(x)| {worst:.3}  declared ≤ {bound:.3}");
    }
    Ok(())
}
