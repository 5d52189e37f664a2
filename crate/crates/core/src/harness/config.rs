//! Strictly parsed experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::measurement::{preset, NoisePattern, PRESET_NAMES};
use crate::sim::EstimatorMode;

pub const SPEC_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    Building,
    Reactor,
    Grid,
    Quadrotor,
    Integrator,
}

impl EnvName {
    pub const ALL: [EnvName; 5] = [
        EnvName::Building,
        EnvName::Reactor,
        EnvName::Grid,
        EnvName::Quadrotor,
        EnvName::Integrator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Building => "building",
            EnvName::Reactor => "reactor",
            EnvName::Grid => "grid",
            EnvName::Quadrotor => "quadrotor",
            EnvName::Integrator => "integrator",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nominal {
    /// Reaches the goal without regard for the constraints.
    Competent,
    /// Drives the state across a constraint boundary.
    Aggressive,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub nominal: Nominal,
    pub filter: bool,
    pub kappa: f64,
    pub l_b: f64,
    pub estimator: EstimatorMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessConfig {
    /// Overrides the environment's goal tolerance.
    pub goal_tol: Option<f64>,
    /// Smallest constraint value an episode may reach and still succeed.
    pub required_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub delta_v: Vec<f64>,
    /// Exit with a verification failure when the 95% lower bound on the
    /// safe-episode probability falls below this value.
    pub floor: Option<f64>,
    /// Nominal episodes used to estimate `b_min` and `L_b`.
    pub calibration_episodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSection {
    pub degree: usize,
    pub source: crate::learning::DerivativeSource,
    pub n_rollouts: usize,
    pub rollout_horizon: usize,
    pub delta_v: f64,
    pub steps: usize,
    pub lambda_scale: f64,
    pub probe_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub presets: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionName {
    Identity,
    GridPhaseShift,
    BuildingTemperatureShift,
    BuildingTemperatureShiftBroken,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompatSection {
    pub action: ActionName,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec_version: u32,
    pub config_id: String,
    pub env: EnvName,
    /// `"native"` for the noise model that belongs to the environment, a preset name, or `"none"`.
    pub noise_preset: String,
    pub controller: ControllerConfig,
    pub delta_w: f64,
    pub n_episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default)]
    pub success: Option<SuccessConfig>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub learn: Option<LearnSection>,
    #[serde(default)]
    pub ablate: Option<AblateSection>,
    #[serde(default)]
    pub compat: Option<CompatSection>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spec_version != SPEC_VERSION {
            return Err(config(format!(
                "spec_version {} is not supported (expected {SPEC_VERSION})",
                self.spec_version
            )));
        }
        if self.config_id.is_empty() {
            return Err(config("config_id must be nonempty"));
        }
        if self.n_episodes == 0 || self.horizon == 0 {
            return Err(config("n_episodes and horizon must be positive"));
        }
        if !(self.delta_w >= 0.0) {
            return Err(config("delta_w must be nonnegative"));
        }
        let c = &self.controller;
        if !(c.kappa > 0.0) || !(c.l_b >= 0.0) {
            return Err(config("controller needs kappa > 0 and l_b ≥ 0"));
        }
        self.noise_pattern(&self.noise_preset)?;
        if let Some(a) = &self.ablate {
            for p in &a.presets {
                self.noise_pattern(p)?;
            }
        }
        if let Some(v) = &self.verify {
            if v.delta_v.is_empty() || v.delta_v.iter().any(|d| !(*d >= 0.0)) {
                return Err(config("verify.delta_v must be a nonempty list of nonnegative values"));
            }
        }
        Ok(())
    }

    /// Resolves a preset name for this environment.
    pub fn noise_pattern(&self, name: &str) -> Result<NoisePattern> {
        if name == "native" {
            return Ok(native_preset(self.env));
        }
        preset(name).ok_or_else(|| {
            config(format!(
                "unknown noise preset {name:?}; expected \"native\", \"none\" or one of {PRESET_NAMES:?}"
            ))
        })
    }
}

/// Sensor noise that belongs to each environment.
pub fn native_preset(env: EnvName) -> NoisePattern {
    use NoisePattern::*;
    match env {
        EnvName::Building => Compound(vec![
            Gaussian {
                sigma: vec![0.1, 0.1, 0.1, 0.5, 0.5, 0.5],
            },
            DriftingBias { lambda: 1e-3 },
        ]),
        EnvName::Reactor => Compound(vec![
            FirstOrderDelay {
                tau: 5.0,
                inner: Box::new(None),
            },
            Gaussian {
                sigma: vec![0.3, 0.02],
            },
        ]),
        EnvName::Grid => Compound(vec![
            FirstOrderDelay {
                tau: 0.1,
                inner: Box::new(None),
            },
            Gaussian { sigma: vec![0.01] },
        ]),
        EnvName::Quadrotor => ProportionalGaussian {
            gamma: 0.03,
            anchor: vec![],
        },
        EnvName::Integrator => Gaussian { sigma: vec![0.05] },
    }
}
