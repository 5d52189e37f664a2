//! Fits building dynamics from noisy derivative data at two noise levels and
//! reads off the error plateau of each run.

use bundlesafe::harness::config::ExperimentConfig;
use bundlesafe::harness::tasks::run_learning;

fn main() -> bundlesafe::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/building_learn.json");
    let base = ExperimentConfig::load(path.as_ref())?;
    for dv in [0.05, 0.1] {
        let mut cfg = base.clone();
        cfg.learn.as_mut().expect("learn section").delta_v = dv;
        let out = run_learning(&cfg)?;
        match out.convergence {
            Some(f) => println!(
                "δ_v {dv}: sup error {:.3e} → plateau {:.3e}, rate λ₁ {:.3}, R² {:.4}",
                out.trace[0].model_error_sup.unwrap_or(f64::NAN),
                f.plateau,
                f.lambda1,
                f.r2
            ),
            None => println!("δ_v {dv}: fit rejected ({})", out.fit_error.unwrap_or_default()),
        }
    }
    Ok(())
}
