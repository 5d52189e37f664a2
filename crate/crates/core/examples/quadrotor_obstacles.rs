//! Quadrotor flights past a randomly placed obstacle under the cascaded
//! controller, filtered on the translational layer.

use bundlesafe::harness::config::ExperimentConfig;
use bundlesafe::harness::episode::run_episode;
use bundlesafe::measurement::NoisePattern;

fn main() -> bundlesafe::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/quadrotor_filtered.json");
    let mut cfg = ExperimentConfig::load(path.as_ref())?;
    cfg.controller.nominal = bundlesafe::harness::config::Nominal::Competent;
    for i in 0..5 {
        let r = run_episode(&cfg, &NoisePattern::None, i)?;
        let min_clear = r.constraint_values.iter().copied().fold(f64::INFINITY, f64::min);
        println!(
            "episode {i}: success {:5}  goal at step {:>5}  final distance {:.3} m  min clearance {:.3} m",
            r.success,
            r.goal_step.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
            r.goal_distance.last().unwrap(),
            min_clear
        );
    }
    Ok(())
}
