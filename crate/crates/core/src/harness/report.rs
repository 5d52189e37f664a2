//! CSV and JSON writers, and merging of result files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::episode::EpisodeRecord;
use super::metrics::{episode_metrics, MetricsReport, Stat};
use crate::error::{config, Result};
use crate::math::{fmt_sig, round_sig};

pub const SIG_DIGITS: usize = 9;

pub const RESULT_COLUMNS: [&str; 16] = [
    "config_id",
    "env",
    "preset",
    "episode",
    "success",
    "violation",
    "PL",
    "GRS",
    "FSE",
    "MMC",
    "AMC",
    "CSR",
    "ACM",
    "CS",
    "clamp_events",
    "filter_infeasible_steps",
];

/// One row of a results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ResultRow {
    pub config_id: String,
    pub env: String,
    pub preset: String,
    pub episode: usize,
    pub success: bool,
    pub violation: bool,
    pub PL: f64,
    pub GRS: Option<f64>,
    pub FSE: f64,
    pub MMC: f64,
    pub AMC: f64,
    pub CSR: f64,
    pub ACM: f64,
    pub CS: f64,
    pub clamp_events: usize,
    pub filter_infeasible_steps: usize,
}

impl ResultRow {
    pub fn from_record(config_id: &str, env: &str, preset: &str, r: &EpisodeRecord) -> Self {
        let m = episode_metrics(r);
        Self {
            config_id: config_id.to_string(),
            env: env.to_string(),
            preset: preset.to_string(),
            episode: r.episode,
            success: m.success,
            violation: m.violation,
            PL: m.pl,
            GRS: m.grs,
            FSE: m.fse,
            MMC: m.mmc,
            AMC: m.amc,
            CSR: m.csr,
            ACM: m.acm,
            CS: m.cs,
            clamp_events: r.clamp_events,
            filter_infeasible_steps: r.infeasible_steps(),
        }
    }

    fn fields(&self) -> Vec<String> {
        let f = |v: f64| fmt_sig(v, SIG_DIGITS);
        vec![
            self.config_id.clone(),
            self.env.clone(),
            self.preset.clone(),
            self.episode.to_string(),
            self.success.to_string(),
            self.violation.to_string(),
            f(self.PL),
            self.GRS.map(f).unwrap_or_default(),
            f(self.FSE),
            f(self.MMC),
            f(self.AMC),
            f(self.CSR),
            f(self.ACM),
            f(self.CS),
            self.clamp_events.to_string(),
            self.filter_infeasible_steps.to_string(),
        ]
    }
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != RESULT_COLUMNS {
        return Err(config(format!("{} is not a results CSV", path.display())));
    }
    let mut rows = Vec::new();
    for r in rd.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}

/// Rounds every float in a JSON tree to [`SIG_DIGITS`].
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            serde_json::Number::from_f64(round_sig(x, SIG_DIGITS))
                .map(Value::Number)
                .unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

pub fn to_rounded_json<T: Serialize>(value: &T) -> Result<String> {
    let v = round_json(serde_json::to_value(value)?);
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_id: String,
    pub env: String,
    pub preset: String,
    pub metrics: MetricsReport,
}

/// Per `(config_id, env, preset)` means across a set of result rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ComparisonRow {
    pub config_id: String,
    pub env: String,
    pub preset: String,
    pub n_episodes: usize,
    pub SR: f64,
    pub CSR: Stat,
    pub MMC: Stat,
    pub PL: Stat,
    pub FSE: Stat,
    pub ACM: Stat,
}

pub fn comparison_table(rows: &[ResultRow]) -> Vec<ComparisonRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.config_id.clone(), r.env.clone(), r.preset.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((config_id, env, preset), g)| {
            let col = |f: fn(&ResultRow) -> f64| Stat::of(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            ComparisonRow {
                config_id,
                env,
                preset,
                n_episodes: g.len(),
                SR: 100.0 * g.iter().filter(|r| r.success).count() as f64 / g.len() as f64,
                CSR: col(|r| r.CSR),
                MMC: col(|r| r.MMC),
                PL: col(|r| r.PL),
                FSE: col(|r| r.FSE),
                ACM: col(|r| r.ACM),
            }
        })
        .collect()
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "config_id", "env", "preset", "n_episodes", "SR", "CSR_mean", "CSR_std", "MMC_mean", "MMC_std", "PL_mean",
        "FSE_mean", "ACM_mean",
    ])?;
    let f = |v: f64| fmt_sig(v, SIG_DIGITS);
    for r in rows {
        w.write_record([
            r.config_id.clone(),
            r.env.clone(),
            r.preset.clone(),
            r.n_episodes.to_string(),
            f(r.SR),
            f(r.CSR.mean),
            f(r.CSR.std),
            f(r.MMC.mean),
            f(r.MMC.std),
            f(r.PL.mean),
            f(r.FSE.mean),
            f(r.ACM.mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}
