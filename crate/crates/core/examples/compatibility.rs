//! Symmetry checks: translations that commute with dynamics and sensing, and
//! one that moves the state without moving the measurement.

use bundlesafe::harness::config::ExperimentConfig;
use bundlesafe::harness::tasks::run_compatibility;

fn main() -> bundlesafe::Result<()> {
    for name in ["grid_compat", "building_compat", "building_compat_broken"] {
        let path = format!("{}/configs/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let rep = run_compatibility(&ExperimentConfig::load(path.as_ref())?)?;
        println!(
            "{:<36} dynamics residual {:.2e}, measurement residual {:.2e}",
            rep.action_name, rep.residual1_max, rep.residual2_max
        );
    }
    Ok(())
}
