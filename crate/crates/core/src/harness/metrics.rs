//! Episode metrics and their aggregation.

use serde::{Deserialize, Serialize};

use super::episode::EpisodeRecord;
use crate::error::{contract, Result};

/// Metrics of a single episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub violation: bool,
    pub pl: f64,
    /// Steps until the goal was first reached.
    pub grs: Option<f64>,
    pub fse: f64,
    pub mmc: f64,
    pub amc: f64,
    pub csr: f64,
    pub acm: f64,
    pub cs: f64,
}

/// Metrics from raw per-step series. `positions` holds the path coordinates
/// of every logged state, `controls` one entry per step.
pub fn metrics_from_series(
    positions: &[Vec<f64>],
    constraint_values: &[f64],
    goal_distance: &[f64],
    goal_step: Option<usize>,
    controls: &[Vec<f64>],
    success: bool,
) -> EpisodeMetrics {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let pl = positions.windows(2).map(|w| dist(&w[1], &w[0])).sum();
    let n = constraint_values.len().max(1) as f64;
    let mmc = constraint_values.iter().copied().fold(f64::INFINITY, f64::min);
    let amc = constraint_values.iter().sum::<f64>() / n;
    let csr = 100.0 * constraint_values.iter().filter(|b| **b >= 0.0).count() as f64 / n;
    let norm = |u: &[f64]| u.iter().map(|c| c * c).sum::<f64>().sqrt();
    let acm = if controls.is_empty() {
        0.0
    } else {
        controls.iter().map(|u| norm(u)).sum::<f64>() / controls.len() as f64
    };
    let cs = if controls.len() < 2 {
        0.0
    } else {
        controls.windows(2).map(|w| dist(&w[1], &w[0])).sum::<f64>() / (controls.len() - 1) as f64
    };
    EpisodeMetrics {
        success,
        violation: constraint_values.iter().any(|b| *b < 0.0),
        pl,
        grs: goal_step.map(|s| s as f64),
        fse: goal_distance.last().copied().unwrap_or(0.0),
        mmc,
        amc,
        csr,
        acm,
        cs,
    }
}

pub fn episode_metrics(r: &EpisodeRecord) -> EpisodeMetrics {
    let positions: Vec<Vec<f64>> = r
        .trajectory
        .states
        .iter()
        .map(|x| r.path_coords.iter().map(|&c| x[c]).collect())
        .collect();
    let controls: Vec<Vec<f64>> = r.trajectory.controls.iter().map(|u| u.iter().copied().collect()).collect();
    metrics_from_series(
        &positions,
        &r.constraint_values,
        &r.goal_distance,
        r.goal_step,
        &controls,
        r.success,
    )
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct MetricsReport {
    pub n_episodes: usize,
    /// Percent of successful episodes.
    pub SR: f64,
    pub PL: Stat,
    /// Over episodes that reached the goal; `None` if none did.
    pub GRS: Option<Stat>,
    pub FSE: Stat,
    pub MMC: Stat,
    pub AMC: Stat,
    pub CSR: Stat,
    pub ACM: Stat,
    pub CS: Stat,
    pub violations: usize,
}

pub fn aggregate(per: &[EpisodeMetrics]) -> Result<MetricsReport> {
    if per.is_empty() {
        return Err(contract("metrics need at least one episode"));
    }
    let col = |f: &dyn Fn(&EpisodeMetrics) -> f64| Stat::of(&per.iter().map(f).collect::<Vec<_>>());
    let grs: Vec<f64> = per.iter().filter_map(|m| m.grs).collect();
    Ok(MetricsReport {
        n_episodes: per.len(),
        SR: 100.0 * per.iter().filter(|m| m.success).count() as f64 / per.len() as f64,
        PL: col(&|m| m.pl),
        GRS: (!grs.is_empty()).then(|| Stat::of(&grs)),
        FSE: col(&|m| m.fse),
        MMC: col(&|m| m.mmc),
        AMC: col(&|m| m.amc),
        CSR: col(&|m| m.csr),
        ACM: col(&|m| m.acm),
        CS: col(&|m| m.cs),
        violations: per.iter().filter(|m| m.violation).count(),
    })
}

pub fn compute_metrics(records: &[EpisodeRecord]) -> Result<MetricsReport> {
    aggregate(&records.iter().map(episode_metrics).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_series_example() {
        let m = metrics_from_series(&vec![vec![0.0]; 3], &[0.3, -0.1, 0.2], &[0.0; 3], None, &[], false);
        assert_eq!(m.mmc, -0.1);
        assert!((m.amc - 0.4 / 3.0).abs() < 1e-15);
        assert!((m.csr - 200.0 / 3.0).abs() < 1e-12);
        assert!(m.violation);
    }

    #[test]
    fn resting_at_goal() {
        let m = metrics_from_series(&vec![vec![1.0, 2.0]; 5], &[1.0; 5], &[0.0; 5], Some(0), &vec![vec![0.5]; 4], true);
        assert_eq!((m.pl, m.fse, m.cs, m.grs), (0.0, 0.0, 0.0, Some(0.0)));
    }

    #[test]
    fn straight_line_length() {
        let pos: Vec<Vec<f64>> = (0..=100).map(|k| vec![k as f64 * 0.01, 0.0]).collect();
        let m = metrics_from_series(&pos, &[1.0; 101], &[0.0; 101], None, &[], false);
        assert!((m.pl - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_std() {
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
    }
}
