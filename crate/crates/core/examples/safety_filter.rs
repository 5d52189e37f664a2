//! Aggressive building controller with and without the measurement-aware filter.

use bundlesafe::harness::ablation::run_cell;
use bundlesafe::harness::config::ExperimentConfig;

fn main() -> bundlesafe::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/building_quickstart.json");
    let on = ExperimentConfig::load(path.as_ref())?;
    let mut off = on.clone();
    off.controller.filter = false;

    for (label, cfg) in [("filter on", &on), ("filter off", &off)] {
        let m = run_cell(cfg, &cfg.noise_preset)?.metrics;
        println!(
            "{label:>10}: CSR {:6.2}%  MMC {:+.3} °C  violating episodes {}/{}",
            m.CSR.mean, m.MMC.mean, m.violations, m.n_episodes
        );
    }
    Ok(())
}
