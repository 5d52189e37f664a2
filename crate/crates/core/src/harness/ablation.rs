//! Paired runs of one configuration across noise presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::episode::run_episodes;
use super::metrics::{compute_metrics, MetricsReport};
use super::report::{to_rounded_json, write_results_csv, ResultRow, Summary};
use crate::error::Result;

/// Episodes of one configuration under one preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub preset: String,
    pub rows: Vec<ResultRow>,
    pub metrics: MetricsReport,
}

pub fn run_cell(cfg: &ExperimentConfig, preset: &str) -> Result<CellResult> {
    let pattern = cfg.noise_pattern(preset)?;
    let records = run_episodes(cfg, &pattern)?;
    let env = cfg.env.as_str();
    let rows = records
        .iter()
        .map(|r| ResultRow::from_record(&cfg.config_id, env, preset, r))
        .collect();
    Ok(CellResult {
        preset: preset.to_string(),
        rows,
        metrics: compute_metrics(&records)?,
    })
}

/// Episode seeds depend only on the configuration, so rows share their
/// start, goal and obstacle draws.
pub fn run_ablation(cfg: &ExperimentConfig, presets: &[String]) -> Result<Vec<CellResult>> {
    presets.iter().map(|p| run_cell(cfg, p)).collect()
}

pub fn summary(cfg: &ExperimentConfig, cell: &CellResult) -> Summary {
    Summary {
        config_id: cfg.config_id.clone(),
        env: cfg.env.as_str().to_string(),
        preset: cell.preset.clone(),
        metrics: cell.metrics.clone(),
    }
}

/// Writes every episode row to `csv_name` and one summary per cell to
/// `json_name` (a bare object for a single cell).
pub fn write_cells(cfg: &ExperimentConfig, cells: &[CellResult], dir: &Path, csv_name: &str, json_name: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rows: Vec<ResultRow> = cells.iter().flat_map(|c| c.rows.iter().cloned()).collect();
    write_results_csv(&rows, std::fs::File::create(dir.join(csv_name))?)?;
    let sums: Vec<Summary> = cells.iter().map(|c| summary(cfg, c)).collect();
    let json = if sums.len() == 1 {
        to_rounded_json(&sums[0])?
    } else {
        to_rounded_json(&sums)?
    };
    std::fs::write(dir.join(json_name), json)?;
    Ok(())
}
