//! Experiment configuration, episode orchestration, metrics and reports.

pub mod ablation;
pub mod config;
pub mod episode;
pub mod metrics;
pub mod report;
pub mod scenario;
pub mod tasks;

pub use ablation::{run_ablation, run_cell, CellResult};
pub use config::{EnvName, ExperimentConfig, Nominal};
pub use episode::{run_episode, run_episodes, EpisodeRecord};
pub use metrics::{compute_metrics, EpisodeMetrics, MetricsReport, Stat};
