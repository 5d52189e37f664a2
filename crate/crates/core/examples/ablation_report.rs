//! Paired runs of the seven uncertainty presets on the building model, then a
//! comparison table built from the per-episode rows.

use bundlesafe::harness::ablation::run_ablation;
use bundlesafe::harness::config::ExperimentConfig;
use bundlesafe::harness::report::comparison_table;

fn main() -> bundlesafe::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/building_presets.json");
    let mut cfg = ExperimentConfig::load(path.as_ref())?;
    cfg.n_episodes = 30;
    let presets = cfg.ablate.clone().expect("ablate section").presets;
    let cells = run_ablation(&cfg, &presets)?;
    let rows: Vec<_> = cells.into_iter().flat_map(|c| c.rows).collect();
    println!("{:<18} {:>6} {:>8} {:>8}", "preset", "SR %", "CSR %", "MMC");
    for r in comparison_table(&rows) {
        println!("{:<18} {:>6.1} {:>8.2} {:>8.3}", r.preset, r.SR, r.CSR.mean, r.MMC.mean);
    }
    Ok(())
}
