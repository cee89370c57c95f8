//! Environment contract shared by both climate environments and every trainer.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub mod biascorr;
pub mod rce;

pub use biascorr::{BiasCorrParams, BiasCorrVersion, BiasCorrectionEnv};
pub use rce::{ObservedProfile, RceEnv, RceParams};

/// Axis-aligned box `[low, high]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSpace {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl BoxSpace {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() {
            return Err(Error::invalid("box bounds must be non-empty and equally long"));
        }
        if let Some(i) = (0..low.len()).find(|&i| !(low[i] < high[i])) {
            return Err(Error::invalid(format!("box dimension {i}: low {} is not below high {}", low[i], high[i])));
        }
        Ok(Self { low, high })
    }

    /// `[-1, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self { low: vec![-1.0; dim], high: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.low).zip(&self.high).all(|((v, l), h)| v >= l && v <= h)
    }

    /// Projects `x` onto the box. NaN components map to the lower bound.
    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.low)
            .zip(&self.high)
            .map(|((&v, &l), &h)| if v.is_nan() { l } else { v.clamp(l, h) })
            .collect()
    }

    /// Affine map from `[-1, 1]^dim` onto the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.low)
            .zip(&self.high)
            .map(|((&v, &l), &h)| l + (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * (h - l))
            .collect()
    }

    /// Affine map from the box onto `[-1, 1]^dim` (values outside are not clipped).
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.low).zip(&self.high).map(|((&v, &l), &h)| 2.0 * (v - l) / (h - l) - 1.0).collect()
    }
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Always false for the climate environments; kept so `(1 - d)` terms
    /// stay explicit in the learners.
    pub terminated: bool,
    /// True exactly on the step that reaches the episode cap.
    pub truncated: bool,
    pub info: BTreeMap<String, Vec<f64>>,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Gym-style episodic environment with a continuous box action space.
pub trait Environment: Send {
    fn id(&self) -> &str;
    fn observation_space(&self) -> &BoxSpace;
    fn action_space(&self) -> &BoxSpace;
    /// Steps per episode before truncation.
    fn max_steps(&self) -> usize;
    /// Restores the initial state. The first reset of a run should carry a seed.
    fn reset(&mut self, seed: Option<u64>) -> Vec<f64>;
    /// Clips `action` into the action box and advances one step.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
    fn boxed_clone(&self) -> Box<dyn Environment>;
}

impl Clone for Box<dyn Environment> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

/// Step counter with the truncation contract.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct EpisodeClock {
    pub steps: usize,
    pub finished: bool,
}

impl EpisodeClock {
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Fails once the episode has been truncated; otherwise counts the step
    /// and reports whether it is the last.
    pub fn tick(&mut self, cap: usize) -> Result<bool> {
        if self.finished {
            return Err(Error::EpisodeOver);
        }
        self.steps += 1;
        self.finished = self.steps >= cap;
        Ok(self.finished)
    }
}

pub(crate) fn check_action(space: &BoxSpace, action: &[f64]) -> Result<Vec<f64>> {
    if action.len() != space.dim() {
        return Err(Error::shape("step", format!("action has {} components, space has {}", action.len(), space.dim())));
    }
    Ok(space.clip(action))
}

/// Which environment an experiment runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvKind {
    BiasCorrection(BiasCorrVersion),
    Rce,
}

impl EnvKind {
    pub fn id(self) -> &'static str {
        match self {
            EnvKind::BiasCorrection(BiasCorrVersion::V0) => "SimpleClimateBiasCorrection-v0",
            EnvKind::BiasCorrection(BiasCorrVersion::V1) => "SimpleClimateBiasCorrection-v1",
            EnvKind::BiasCorrection(BiasCorrVersion::V2) => "SimpleClimateBiasCorrection-v2",
            EnvKind::Rce => "RadiativeConvectiveModel-v0",
        }
    }

    pub fn episode_steps(self) -> usize {
        match self {
            EnvKind::BiasCorrection(_) => biascorr::DEFAULT_MAX_STEPS,
            EnvKind::Rce => rce::DEFAULT_MAX_STEPS,
        }
    }
}

/// Everything needed to build a fresh environment instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub biascorr: BiasCorrParams,
    pub rce: RceParams,
    pub observed: Option<ObservedProfile>,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        Self { kind, biascorr: BiasCorrParams::default(), rce: RceParams::default(), observed: None }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self.kind {
            EnvKind::BiasCorrection(v) => Box::new(BiasCorrectionEnv::new(v, self.biascorr.clone())?),
            EnvKind::Rce => {
                let observed = match &self.observed {
                    Some(p) => p.clone(),
                    None => ObservedProfile::standard_atmosphere(&self.rce.pressure_levels)?,
                };
                Box::new(RceEnv::new(self.rce.clone(), observed)?)
            }
        })
    }

    /// Applies one `env.<key>` override from a run configuration.
    pub fn set_override(&mut self, key: &str, value: f64) -> Result<()> {
        let bc = &mut self.biascorr;
        let rc = &mut self.rce;
        match key {
            "T_observed" => bc.t_observed = value,
            "T_physics" => bc.t_physics = value,
            "T_initial" => bc.t_initial = value,
            "relax_a" => bc.relax_a = value,
            "relax_b" => bc.relax_b = value,
            "norm_low" => bc.norm_low = value,
            "norm_high" => bc.norm_high = value,
            "lag" => bc.lag = as_count(key, value)?,
            "initial_temperature" => rc.initial_temperature = value,
            "emissivity_init" => rc.emissivity_init = value,
            "lapse_rate_init" => rc.lapse_rate_init = value,
            "insolation" => rc.physics.insolation = value,
            "albedo" => rc.physics.albedo = value,
            "dt" => rc.physics.dt = value,
            "surface_heat_capacity" => rc.physics.surface_heat_capacity = value,
            "substeps" => rc.substeps = as_count(key, value)?,
            _ => return Err(Error::invalid(format!("unknown environment override `env.{key}`"))),
        }
        Ok(())
    }
}

fn as_count(key: &str, value: f64) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 {
        Ok(value as usize)
    } else {
        Err(Error::invalid(format!("env.{key} must be a positive integer, got {value}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_rejects_inverted_bounds() {
        assert!(BoxSpace::new(vec![1.0], vec![1.0]).is_err());
        assert!(BoxSpace::new(vec![0.0, 2.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn clip_and_unit_maps() {
        let b = BoxSpace::new(vec![0.0, 5.5], vec![1.0, 9.8]).unwrap();
        assert_eq!(b.clip(&[2.0, 1.0]), vec![1.0, 5.5]);
        assert_eq!(b.from_unit(&[-1.0, 1.0]), vec![0.0, 9.8]);
        let back = b.from_unit(&b.to_unit(&[0.25, 7.0]));
        assert!((back[0] - 0.25).abs() < 1e-12 && (back[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn clock_truncates_and_then_refuses() {
        let mut c = EpisodeClock::default();
        assert!(!c.tick(2).unwrap());
        assert!(c.tick(2).unwrap());
        assert!(matches!(c.tick(2), Err(Error::EpisodeOver)));
        c.reset();
        assert!(!c.tick(2).unwrap());
    }

    #[test]
    fn unknown_override_is_rejected() {
        let mut spec = EnvSpec::new(EnvKind::Rce);
        assert!(spec.set_override("bogus", 1.0).is_err());
        spec.set_override("T_physics", 324.0).unwrap();
        assert_eq!(spec.biascorr.t_physics, 324.0);
    }
}
