//! The sixteen experiment codes and the thresholds each environment is scored against.

use std::fmt;
use std::str::FromStr;

use crate::env::{BiasCorrVersion, EnvKind};
use crate::error::{Error, Result};

/// How the actor-critic layer size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerSetting {
    /// Per-algorithm tuned configuration.
    OptimL,
    /// Every algorithm uses 64 units per hidden layer.
    Homo64L,
}

/// Step budget of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Compute {
    /// 60k steps on the bias-correction environments, 10k on RCE.
    Ideal,
    /// A reduced, configurable budget.
    Realistic,
}

/// Default realistic-compute budgets (bias-correction, RCE).
pub const REALISTIC_STEPS: (u64, u64) = (20_000, 4_000);
/// Ideal-compute budgets (bias-correction, RCE).
pub const IDEAL_STEPS: (u64, u64) = (60_000, 10_000);

/// An experiment code such as `v0-homo-64L-60k` or `rce-v0-optim-L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExperimentId {
    pub env: EnvKind,
    pub layers: LayerSetting,
    pub compute: Compute,
}

impl ExperimentId {
    pub fn new(env: EnvKind, layers: LayerSetting, compute: Compute) -> Self {
        Self { env, layers, compute }
    }

    /// All sixteen codes, grouped by environment.
    pub fn all() -> Vec<ExperimentId> {
        let envs = [
            EnvKind::BiasCorrection(BiasCorrVersion::V0),
            EnvKind::BiasCorrection(BiasCorrVersion::V1),
            EnvKind::BiasCorrection(BiasCorrVersion::V2),
            EnvKind::Rce,
        ];
        let mut out = Vec::with_capacity(16);
        for env in envs {
            for layers in [LayerSetting::OptimL, LayerSetting::Homo64L] {
                for compute in [Compute::Realistic, Compute::Ideal] {
                    out.push(Self::new(env, layers, compute));
                }
            }
        }
        out
    }

    pub fn is_rce(&self) -> bool {
        self.env == EnvKind::Rce
    }

    /// Step budget; `realistic` overrides the default realistic budget.
    pub fn budget(&self, realistic: Option<u64>) -> u64 {
        let (ideal, default_realistic) = if self.is_rce() {
            (IDEAL_STEPS.1, REALISTIC_STEPS.1)
        } else {
            (IDEAL_STEPS.0, REALISTIC_STEPS.0)
        };
        match self.compute {
            Compute::Ideal => ideal,
            Compute::Realistic => realistic.unwrap_or(default_realistic),
        }
    }

    pub fn threshold(&self) -> ThresholdSpec {
        ThresholdSpec::for_env(self.env)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let env = match self.env {
            EnvKind::BiasCorrection(BiasCorrVersion::V0) => "v0",
            EnvKind::BiasCorrection(BiasCorrVersion::V1) => "v1",
            EnvKind::BiasCorrection(BiasCorrVersion::V2) => "v2",
            EnvKind::Rce => "rce-v0",
        };
        let layers = match self.layers {
            LayerSetting::OptimL => "optim-L",
            LayerSetting::Homo64L => "homo-64L",
        };
        write!(f, "{env}-{layers}")?;
        if self.compute == Compute::Ideal {
            f.write_str(if self.is_rce() { "-10k" } else { "-60k" })?;
        }
        Ok(())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::all().into_iter().find(|e| e.to_string() == s.trim()).ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}

/// Episodic-return threshold of one environment and the per-step error it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSpec {
    pub env: EnvKind,
    pub threshold: f64,
    /// Published per-step error (K) the threshold corresponds to.
    pub per_step_error: f64,
    /// Part of `|threshold|` that is not tracking error (v2's constant offset).
    pub offset: f64,
    pub episode_steps: usize,
}

impl ThresholdSpec {
    pub fn for_env(env: EnvKind) -> Self {
        let (threshold, per_step_error, offset) = match env {
            EnvKind::BiasCorrection(BiasCorrVersion::V0) => (-0.25, 0.035, 0.0),
            EnvKind::BiasCorrection(BiasCorrVersion::V1) => (-2.718, 0.116, 0.0),
            EnvKind::BiasCorrection(BiasCorrVersion::V2) => (-(160.0 + 2.718), 0.116, 160.0),
            EnvKind::Rce => (-43_900.0, 9.37, 0.0),
        };
        Self { env, threshold, per_step_error, offset, episode_steps: env.episode_steps() }
    }

    /// `sqrt((|threshold| - offset) / episode_steps)`.
    pub fn implied_per_step_error(&self) -> f64 {
        ((self.threshold.abs() - self.offset) / self.episode_steps as f64).sqrt()
    }
}

/// Checks that the threshold reproduces its published per-step error within 2%.
pub fn threshold_consistency(spec: &ThresholdSpec) -> Result<()> {
    let implied = spec.implied_per_step_error();
    let rel = (implied - spec.per_step_error).abs() / spec.per_step_error;
    if rel <= 0.02 {
        Ok(())
    } else {
        Err(Error::InconsistentThreshold(format!(
            "{}: threshold {} implies {implied:.4} K per step, table says {}",
            spec.env.id(),
            spec.threshold,
            spec.per_step_error
        )))
    }
}
