//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure,
//! 4 verification floor not met.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::ablation::{run_ablation, run_cell, write_cells};
use crate::harness::config::ExperimentConfig;
use crate::harness::report::{
    comparison_table, read_results_csv, to_rounded_json, write_comparison_csv, write_results_csv,
};
use crate::harness::tasks::{run_compatibility, run_learning, run_verification};
use crate::math::fmt_sig;
use crate::measurement::PRESET_NAMES;

/// Episode count used by `--paper-scale`.
pub const PAPER_SCALE_EPISODES: usize = 300;
pub const SEED_ENV: &str = "BUNDLESAFE_SEED";

#[derive(Debug, Parser)]
#[command(name = "bundlesafe", version, about = "Measurement-aware safety filtering experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured base seed; `BUNDLESAFE_SEED` overrides this.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Use 300 episodes per cell.
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes and write per-episode results and a metrics summary.
    Run(Common),
    /// Monte Carlo violation rates over a sweep of measurement-noise bounds.
    Verify(Common),
    /// Fit a dynamics model and check the error-trace convergence law.
    Learn(Common),
    /// Paired runs across measurement-noise presets.
    Ablate(Common),
    /// Check a group action for compatibility with dynamics and sensing.
    Compat(Common),
    /// Merge result CSVs into one comparison table.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
}

/// Failures mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
    Floor(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Floor(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) | Failure::Floor(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(common: &Common) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Ok(s) = std::env::var(SEED_ENV) {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
    } else if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.paper_scale {
        cfg.n_episodes = PAPER_SCALE_EPISODES;
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

/// Runs a parsed command; `Ok` carries a one-line summary for stdout.
pub fn execute(cli: Cli) -> std::result::Result<String, Failure> {
    let jobs = match &cli.command {
        Command::Report { .. } => None,
        Command::Run(c) | Command::Verify(c) | Command::Learn(c) | Command::Ablate(c) | Command::Compat(c) => c.jobs,
    };
    let work = move || dispatch(cli.command);
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Failure::Runtime(e.to_string()))?
            .install(work),
        None => work(),
    }
}

fn dispatch(cmd: Command) -> std::result::Result<String, Failure> {
    match cmd {
        Command::Run(c) => {
            let cfg = load(&c)?;
            let cell = run_cell(&cfg, &cfg.noise_preset)?;
            write_cells(&cfg, std::slice::from_ref(&cell), &c.out, "results.csv", "summary.json")?;
            Ok(format!(
                "{}: {} episodes, SR {}%, CSR {}%",
                cfg.config_id,
                cfg.n_episodes,
                fmt_sig(cell.metrics.SR, 4),
                fmt_sig(cell.metrics.CSR.mean, 4)
            ))
        }
        Command::Verify(c) => {
            let cfg = load(&c)?;
            let reports = run_verification(&cfg)?;
            write(&c.out, "verify.json", &to_rounded_json(&reports)?)?;
            let mut lines = Vec::new();
            for r in &reports {
                lines.push(format!(
                    "delta_v {}: rate {} [{}, {}]",
                    fmt_sig(r.delta_v, 4),
                    fmt_sig(r.rate, 4),
                    fmt_sig(r.ci95_low, 4),
                    fmt_sig(r.ci95_high, 4)
                ));
            }
            if let Some(floor) = cfg.verify.as_ref().and_then(|v| v.floor) {
                if let Some(r) = reports.iter().find(|r| r.safety_lower_bound() < floor) {
                    return Err(Failure::Floor(format!(
                        "safety lower bound {} at delta_v {} is below the floor {floor}",
                        fmt_sig(r.safety_lower_bound(), 6),
                        r.delta_v
                    )));
                }
            }
            Ok(lines.join("\n"))
        }
        Command::Learn(c) => {
            let cfg = load(&c)?;
            let out = run_learning(&cfg)?;
            std::fs::create_dir_all(&c.out).map_err(Error::from)?;
            let mut w = csv::Writer::from_path(c.out.join("trace.csv")).map_err(Error::from)?;
            w.write_record(["iter", "loss", "model_error_sup", "model_error_mean"])
                .map_err(Error::from)?;
            let opt = |v: Option<f64>| v.map(|x| fmt_sig(x, 9)).unwrap_or_default();
            for t in &out.trace {
                w.write_record([
                    t.iter.to_string(),
                    fmt_sig(t.loss, 9),
                    opt(t.model_error_sup),
                    opt(t.model_error_mean),
                ])
                .map_err(Error::from)?;
            }
            w.flush().map_err(Error::from)?;
            write(&c.out, "model.json", &to_rounded_json(&out.model)?)?;
            let summary = serde_json::json!({
                "config_id": cfg.config_id,
                "iterations": out.trace.len() - 1,
                "final_loss": out.final_loss,
                "final_error_sup": out.final_error_sup,
                "convergence": out.convergence,
                "fit_error": out.fit_error,
            });
            write(&c.out, "learn_summary.json", &to_rounded_json(&summary)?)?;
            Ok(match out.convergence {
                Some(f) => format!("plateau {}, lambda1 {}, R2 {}", fmt_sig(f.plateau, 4), fmt_sig(f.lambda1, 4), fmt_sig(f.r2, 4)),
                None => format!("convergence fit rejected: {}", out.fit_error.unwrap_or_default()),
            })
        }
        Command::Ablate(c) => {
            let cfg = load(&c)?;
            let presets: Vec<String> = match &cfg.ablate {
                Some(a) => a.presets.clone(),
                None => PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
            };
            let cells = run_ablation(&cfg, &presets)?;
            write_cells(&cfg, &cells, &c.out, "ablation.csv", "ablation.json")?;
            Ok(cells
                .iter()
                .map(|cell| {
                    format!(
                        "{}: SR {}%, CSR {}%",
                        cell.preset,
                        fmt_sig(cell.metrics.SR, 4),
                        fmt_sig(cell.metrics.CSR.mean, 4)
                    )
                })
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::Compat(c) => {
            let cfg = load(&c)?;
            let rep = run_compatibility(&cfg)?;
            write(&c.out, "compat.json", &to_rounded_json(&rep)?)?;
            Ok(format!(
                "{}: residual1 {}, residual2 {}",
                rep.action_name,
                fmt_sig(rep.residual1_max, 3),
                fmt_sig(rep.residual2_max, 3)
            ))
        }
        Command::Report { out, results } => {
            let mut rows = Vec::new();
            for p in &results {
                rows.extend(read_results_csv(p)?);
            }
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            write_results_csv(&rows, std::fs::File::create(out.join("merged.csv")).map_err(Error::from)?)?;
            let table = comparison_table(&rows);
            write_comparison_csv(&table, std::fs::File::create(out.join("comparison.csv")).map_err(Error::from)?)?;
            write(&out, "comparison.json", &to_rounded_json(&table)?)?;
            Ok(format!("{} rows, {} groups", rows.len(), table.len()))
        }
    }
}

/// Parses `std::env::args`, runs, prints, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}
