//! `SimpleClimateBiasCorrection`: a single temperature relaxed toward a
//! biased physics value, corrected by a bounded heating increment.

use std::collections::{BTreeMap, VecDeque};

use super::{check_action, BoxSpace, Environment, EpisodeClock, StepResult};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const DEFAULT_MAX_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BiasCorrVersion {
    /// Dense reward on the relaxation term.
    V0,
    /// Dense squared-error reward in normalised units.
    V1,
    /// The v1 reward delivered `lag` steps late.
    V2,
}

/// Environment constants, all temperatures in Kelvin.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasCorrParams {
    pub t_observed: f64,
    pub t_physics: f64,
    pub t_initial: f64,
    /// Weight of the relaxation toward the physics temperature.
    pub relax_a: f64,
    /// Weight of the nudging toward the observed temperature.
    pub relax_b: f64,
    pub norm_low: f64,
    pub norm_high: f64,
    pub lag: usize,
    pub max_steps: usize,
}

impl Default for BiasCorrParams {
    fn default() -> Self {
        Self {
            t_observed: 321.75,
            t_physics: 323.75,
            t_initial: 320.0,
            relax_a: 0.2,
            relax_b: 0.1,
            norm_low: 310.0,
            norm_high: 330.0,
            lag: 5,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl BiasCorrParams {
    pub fn validate(&self) -> Result<()> {
        if self.bias() == 0.0 {
            return Err(Error::invalid("T_physics must differ from T_observed"));
        }
        if !(self.norm_low < self.norm_high) {
            return Err(Error::invalid("norm_low must be below norm_high"));
        }
        if self.lag == 0 || self.max_steps == 0 {
            return Err(Error::invalid("lag and max_steps must be at least 1"));
        }
        Ok(())
    }

    /// `T_physics - T_observed`, the denominator of the dynamics.
    pub fn bias(&self) -> f64 {
        self.t_physics - self.t_observed
    }

    /// Maps a temperature onto the observation scale.
    pub fn normalize(&self, t: f64) -> f64 {
        (t - self.norm_low) / (self.norm_high - self.norm_low)
    }
}

/// Solves the implicit update
/// `T_new = T + u + a (T_phys - T)/D + b (T_obs - T_new)/D` for `T_new`,
/// with `D = T_phys - T_obs`.
pub fn update_temperature(t_current: f64, u: f64, p: &BiasCorrParams) -> Result<f64> {
    let d = p.bias();
    if d == 0.0 {
        return Err(Error::invalid("T_physics equals T_observed"));
    }
    let x = t_current + u + p.relax_a * (p.t_physics - t_current) / d;
    Ok((x + p.relax_b * p.t_observed / d) / (1.0 + p.relax_b / d))
}

/// Per-step reward before any delay.
///
/// v0 penalises the squared nudging term; v1/v2 penalise the squared
/// distance of the pre-step temperature from the observation, in
/// normalised units.
pub fn reward_value(version: BiasCorrVersion, t_new: f64, t_current: f64, p: &BiasCorrParams) -> f64 {
    match version {
        BiasCorrVersion::V0 => {
            let e = (p.t_observed - t_new) / p.bias() * p.relax_b;
            -(e * e)
        }
        BiasCorrVersion::V1 | BiasCorrVersion::V2 => {
            let e = (p.t_observed - t_current) / (p.norm_high - p.norm_low);
            -(e * e)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasCorrState {
    pub t_current: f64,
    pub step_index: usize,
    /// `(due_step, reward)` pairs awaiting delivery (v2 only).
    pub pending: VecDeque<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct BiasCorrectionEnv {
    params: BiasCorrParams,
    version: BiasCorrVersion,
    state: BiasCorrState,
    clock: EpisodeClock,
    observation_space: BoxSpace,
    action_space: BoxSpace,
    rng: RngStream,
    id: String,
}

impl BiasCorrectionEnv {
    pub fn new(version: BiasCorrVersion, params: BiasCorrParams) -> Result<Self> {
        params.validate()?;
        let id = super::EnvKind::BiasCorrection(version).id().to_string();
        let state = BiasCorrState { t_current: params.t_initial, step_index: 0, pending: VecDeque::new() };
        Ok(Self {
            params,
            version,
            state,
            clock: EpisodeClock::default(),
            observation_space: BoxSpace::new(vec![0.0], vec![1.0])?,
            action_space: BoxSpace::new(vec![-1.0], vec![1.0])?,
            rng: RngStream::new(0),
            id,
        })
    }

    pub fn params(&self) -> &BiasCorrParams {
        &self.params
    }

    pub fn state(&self) -> &BiasCorrState {
        &self.state
    }

    pub fn version(&self) -> BiasCorrVersion {
        self.version
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.params.normalize(self.state.t_current).clamp(0.0, 1.0)]
    }
}

impl Environment for BiasCorrectionEnv {
    fn id(&self) -> &str {
        &self.id
    }

    fn observation_space(&self) -> &BoxSpace {
        &self.observation_space
    }

    fn action_space(&self) -> &BoxSpace {
        &self.action_space
    }

    fn max_steps(&self) -> usize {
        self.params.max_steps
    }

    fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        if let Some(s) = seed {
            self.rng = RngStream::new(s);
        }
        self.state = BiasCorrState { t_current: self.params.t_initial, step_index: 0, pending: VecDeque::new() };
        self.clock.reset();
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let u = check_action(&self.action_space, action)?[0];
        let truncated = self.clock.tick(self.params.max_steps)?;
        let k = self.state.step_index;
        let t_current = self.state.t_current;
        let t_new = update_temperature(t_current, u, &self.params)?;
        let value = reward_value(self.version, t_new, t_current, &self.params);

        let reward = match self.version {
            BiasCorrVersion::V0 | BiasCorrVersion::V1 => value,
            BiasCorrVersion::V2 => {
                self.state.pending.push_back((k + self.params.lag, value));
                let mut delivered = 0.0;
                while let Some(&(due, r)) = self.state.pending.front() {
                    if due > k && !truncated {
                        break;
                    }
                    delivered += r;
                    self.state.pending.pop_front();
                }
                delivered
            }
        };

        self.state.t_current = t_new;
        self.state.step_index += 1;
        let mut info = BTreeMap::new();
        info.insert("temperature_K".to_string(), vec![t_new]);
        info.insert("reward_undelayed".to_string(), vec![value]);
        Ok(StepResult { observation: self.observe(), reward, terminated: false, truncated, info })
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
