//! Algorithm tags and hyperparameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    Reinforce,
    Dpg,
    Ddpg,
    Td3,
    Trpo,
    Ppo,
    Sac,
    Tqc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Reinforce,
        Algorithm::Dpg,
        Algorithm::Ddpg,
        Algorithm::Td3,
        Algorithm::Trpo,
        Algorithm::Ppo,
        Algorithm::Sac,
        Algorithm::Tqc,
    ];

    /// Lower-case tag used in files and on the command line.
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Reinforce => "reinforce",
            Algorithm::Dpg => "dpg",
            Algorithm::Ddpg => "ddpg",
            Algorithm::Td3 => "td3",
            Algorithm::Trpo => "trpo",
            Algorithm::Ppo => "ppo",
            Algorithm::Sac => "sac",
            Algorithm::Tqc => "tqc",
        }
    }

    /// Display name as used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Algorithm::Reinforce => "REINFORCE",
            Algorithm::Dpg => "DPG",
            Algorithm::Ddpg => "DDPG",
            Algorithm::Td3 => "TD3",
            Algorithm::Trpo => "TRPO",
            Algorithm::Ppo => "PPO",
            Algorithm::Sac => "SAC",
            Algorithm::Tqc => "TQC",
        }
    }

    /// Learns from a replay buffer.
    pub fn is_off_policy(self) -> bool {
        matches!(self, Algorithm::Ddpg | Algorithm::Td3 | Algorithm::Sac | Algorithm::Tqc)
    }

    /// The tunable hyperparameters of this algorithm.
    pub fn tunables(self) -> &'static [&'static str] {
        match self {
            Algorithm::Reinforce => &["learning_rate", "actor_critic_layer_size"],
            Algorithm::Ddpg => &[
                "learning_rate",
                "tau",
                "batch_size",
                "exploration_noise",
                "policy_frequency",
                "noise_clip",
                "actor_critic_layer_size",
            ],
            Algorithm::Dpg => &["learning_rate", "exploration_noise", "policy_frequency", "actor_critic_layer_size"],
            Algorithm::Td3 => &[
                "learning_rate",
                "tau",
                "batch_size",
                "policy_noise",
                "exploration_noise",
                "policy_frequency",
                "noise_clip",
                "actor_critic_layer_size",
            ],
            Algorithm::Ppo | Algorithm::Trpo => &[
                "learning_rate",
                "num_minibatches",
                "update_epochs",
                "clip_coef",
                "max_grad_norm",
                "actor_critic_layer_size",
            ],
            Algorithm::Sac => &[
                "tau",
                "batch_size",
                "policy_lr",
                "q_lr",
                "policy_frequency",
                "target_network_frequency",
                "noise_clip",
                "alpha",
                "actor_critic_layer_size",
            ],
            Algorithm::Tqc => &[
                "tau",
                "batch_size",
                "n_quantiles",
                "n_critics",
                "actor_adam_lr",
                "critic_adam_lr",
                "alpha_adam_lr",
                "policy_frequency",
                "target_network_frequency",
                "actor_critic_layer_size",
            ],
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Algorithm::ALL.into_iter().find(|a| a.tag() == lower).ok_or_else(|| Error::UnknownAlgorithm(s.to_string()))
    }
}

/// Every hyperparameter any of the trainers reads. Only the fields listed by
/// [`Algorithm::tunables`] are searched by the tuner; the rest are fixed
/// protocol constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub policy_lr: f64,
    pub q_lr: f64,
    pub actor_adam_lr: f64,
    pub critic_adam_lr: f64,
    pub alpha_adam_lr: f64,
    pub tau: f64,
    pub batch_size: usize,
    /// Std of behaviour noise, in normalised action units.
    pub exploration_noise: f64,
    /// Std of target-policy smoothing noise.
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_frequency: usize,
    pub target_network_frequency: usize,
    pub num_minibatches: usize,
    pub update_epochs: usize,
    pub clip_coef: f64,
    pub max_grad_norm: f64,
    /// Initial entropy coefficient.
    pub alpha: f64,
    pub autotune_alpha: bool,
    pub n_quantiles: usize,
    pub n_critics: usize,
    /// Quantiles dropped per critic from the pooled target.
    pub top_quantiles_to_drop: usize,
    pub actor_critic_layer_size: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub total_timesteps: u64,
    pub learning_starts: u64,
    pub buffer_size: usize,
    /// KL limit for TRPO's trust region and the early-stop of both trust-region methods.
    pub kl_limit: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub line_search_steps: usize,
    pub norm_adv: bool,
    /// Multiplies rewards before learning; episodic returns are logged unscaled.
    pub reward_scale: f64,
}

impl AlgoConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        let mut c = Self {
            algorithm,
            learning_rate: 3e-4,
            policy_lr: 3e-4,
            q_lr: 1e-3,
            actor_adam_lr: 3e-4,
            critic_adam_lr: 3e-4,
            alpha_adam_lr: 3e-4,
            tau: 0.005,
            batch_size: 64,
            exploration_noise: 0.1,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_frequency: 2,
            target_network_frequency: 1,
            num_minibatches: 4,
            update_epochs: 10,
            clip_coef: 0.2,
            max_grad_norm: 0.5,
            alpha: 0.2,
            autotune_alpha: true,
            n_quantiles: 25,
            n_critics: 2,
            top_quantiles_to_drop: 2,
            actor_critic_layer_size: 64,
            gamma: 0.99,
            gae_lambda: 0.95,
            total_timesteps: 60_000,
            learning_starts: 1_000,
            buffer_size: 100_000,
            kl_limit: 0.02,
            vf_coef: 0.5,
            ent_coef: 0.0,
            cg_iters: 10,
            cg_damping: 0.1,
            line_search_steps: 10,
            norm_adv: true,
            reward_scale: 1.0,
        };
        match algorithm {
            Algorithm::Reinforce => c.learning_rate = 1e-3,
            Algorithm::Dpg | Algorithm::Ddpg => c.policy_frequency = 1,
            Algorithm::Trpo => c.learning_rate = 1e-3,
            Algorithm::Tqc => c.alpha = 1.0,
            _ => {}
        }
        c
    }

    pub fn tunables(&self) -> &'static [&'static str] {
        self.algorithm.tunables()
    }

    /// Reads a hyperparameter by name.
    pub fn get(&self, key: &str) -> Result<f64> {
        Ok(match key {
            "learning_rate" => self.learning_rate,
            "policy_lr" => self.policy_lr,
            "q_lr" => self.q_lr,
            "actor_adam_lr" => self.actor_adam_lr,
            "critic_adam_lr" => self.critic_adam_lr,
            "alpha_adam_lr" => self.alpha_adam_lr,
            "tau" => self.tau,
            "batch_size" => self.batch_size as f64,
            "exploration_noise" => self.exploration_noise,
            "policy_noise" => self.policy_noise,
            "noise_clip" => self.noise_clip,
            "policy_frequency" => self.policy_frequency as f64,
            "target_network_frequency" => self.target_network_frequency as f64,
            "num_minibatches" => self.num_minibatches as f64,
            "update_epochs" => self.update_epochs as f64,
            "clip_coef" => self.clip_coef,
            "max_grad_norm" => self.max_grad_norm,
            "alpha" => self.alpha,
            "autotune_alpha" => f64::from(u8::from(self.autotune_alpha)),
            "n_quantiles" => self.n_quantiles as f64,
            "n_critics" => self.n_critics as f64,
            "top_quantiles_to_drop" => self.top_quantiles_to_drop as f64,
            "actor_critic_layer_size" => self.actor_critic_layer_size as f64,
            "gamma" => self.gamma,
            "gae_lambda" => self.gae_lambda,
            "total_timesteps" => self.total_timesteps as f64,
            "learning_starts" => self.learning_starts as f64,
            "buffer_size" => self.buffer_size as f64,
            "kl_limit" => self.kl_limit,
            "vf_coef" => self.vf_coef,
            "ent_coef" => self.ent_coef,
            "cg_iters" => self.cg_iters as f64,
            "cg_damping" => self.cg_damping,
            "line_search_steps" => self.line_search_steps as f64,
            "norm_adv" => f64::from(u8::from(self.norm_adv)),
            "reward_scale" => self.reward_scale,
            _ => return Err(Error::invalid(format!("unknown hyperparameter `{key}`"))),
        })
    }

    /// Sets a hyperparameter by name; integer fields require integral values.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::invalid(format!("{key} must be finite")));
        }
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::invalid(format!("{key} must be a non-negative integer, got {v}")))
            }
        };
        let flag = |v: f64| v != 0.0;
        match key {
            "learning_rate" => self.learning_rate = value,
            "policy_lr" => self.policy_lr = value,
            "q_lr" => self.q_lr = value,
            "actor_adam_lr" => self.actor_adam_lr = value,
            "critic_adam_lr" => self.critic_adam_lr = value,
            "alpha_adam_lr" => self.alpha_adam_lr = value,
            "tau" => self.tau = value,
            "batch_size" => self.batch_size = count(value)?,
            "exploration_noise" => self.exploration_noise = value,
            "policy_noise" => self.policy_noise = value,
            "noise_clip" => self.noise_clip = value,
            "policy_frequency" => self.policy_frequency = count(value)?,
            "target_network_frequency" => self.target_network_frequency = count(value)?,
            "num_minibatches" => self.num_minibatches = count(value)?,
            "update_epochs" => self.update_epochs = count(value)?,
            "clip_coef" => self.clip_coef = value,
            "max_grad_norm" => self.max_grad_norm = value,
            "alpha" => self.alpha = value,
            "autotune_alpha" => self.autotune_alpha = flag(value),
            "n_quantiles" => self.n_quantiles = count(value)?,
            "n_critics" => self.n_critics = count(value)?,
            "top_quantiles_to_drop" => self.top_quantiles_to_drop = count(value)?,
            "actor_critic_layer_size" => self.actor_critic_layer_size = count(value)?,
            "gamma" => self.gamma = value,
            "gae_lambda" => self.gae_lambda = value,
            "total_timesteps" => self.total_timesteps = count(value)? as u64,
            "learning_starts" => self.learning_starts = count(value)? as u64,
            "buffer_size" => self.buffer_size = count(value)?,
            "kl_limit" => self.kl_limit = value,
            "vf_coef" => self.vf_coef = value,
            "ent_coef" => self.ent_coef = value,
            "cg_iters" => self.cg_iters = count(value)?,
            "cg_damping" => self.cg_damping = value,
            "line_search_steps" => self.line_search_steps = count(value)?,
            "norm_adv" => self.norm_adv = flag(value),
            "reward_scale" => self.reward_scale = value,
            _ => return Err(Error::invalid(format!("unknown hyperparameter `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("policy_lr", self.policy_lr),
            ("q_lr", self.q_lr),
            ("actor_adam_lr", self.actor_adam_lr),
            ("critic_adam_lr", self.critic_adam_lr),
            ("alpha_adam_lr", self.alpha_adam_lr),
            ("max_grad_norm", self.max_grad_norm),
            ("kl_limit", self.kl_limit),
            ("reward_scale", self.reward_scale),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::invalid(format!("{k} must be positive, got {v}")));
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::invalid("tau, gamma and gae_lambda must lie in [0, 1]"));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("policy_frequency", self.policy_frequency),
            ("target_network_frequency", self.target_network_frequency),
            ("num_minibatches", self.num_minibatches),
            ("update_epochs", self.update_epochs),
            ("n_quantiles", self.n_quantiles),
            ("n_critics", self.n_critics),
            ("actor_critic_layer_size", self.actor_critic_layer_size),
            ("buffer_size", self.buffer_size),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{k} must be at least 1")));
        }
        if self.exploration_noise < 0.0 || self.policy_noise < 0.0 || self.noise_clip < 0.0 || self.alpha < 0.0 {
            return Err(Error::invalid("noise scales and alpha must be non-negative"));
        }
        if self.algorithm == Algorithm::Tqc && self.top_quantiles_to_drop >= self.n_quantiles {
            return Err(Error::invalid("TQC must keep at least one quantile per critic"));
        }
        if matches!(self.algorithm, Algorithm::Td3 | Algorithm::Sac) && self.n_critics != 2 {
            return Err(Error::invalid("TD3 and SAC use exactly two critics"));
        }
        Ok(())
    }
}
