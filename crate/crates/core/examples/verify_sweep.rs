//! Monte Carlo violation rates against the exponential bound on the 1-D system.

use bundlesafe::harness::config::ExperimentConfig;
use bundlesafe::harness::tasks::run_verification;

fn main() -> bundlesafe::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/integrator_verify.json");
    let mut cfg = ExperimentConfig::load(path.as_ref())?;
    cfg.n_episodes = 500;
    println!("{:>6} {:>8} {:>17} {:>12}", "δ_v", "rate", "95% interval", "P(safe) ≥");
    for r in run_verification(&cfg)? {
        println!(
            "{:>6} {:>8.4} [{:.4}, {:.4}] {:>12}",
            r.delta_v,
            r.rate,
            r.ci95_low,
            r.ci95_high,
            r.theoretical_bound.map(|b| format!("{b:.4}")).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}
