//! The eight continuous-control learners and the loop that trains them.
//!
//! Learners work in normalised coordinates: observations are mapped onto
//! `[-1, 1]` from the environment's observation box and actions are emitted
//! in `[-1, 1]`, then mapped affinely onto the action box by [`Agent`].

use crate::autodiff::{Graph, Var};
use crate::env::{BoxSpace, Environment};
use crate::error::{Error, Result};
use crate::nn::{Mlp, Params};
use crate::optim::{clip_grad_norm, Optimizer};
use crate::rng::RngStream;
use crate::rollout::Transition;
use crate::tensor::Tensor;

pub mod config;
pub mod ddpg;
pub mod dpg;
pub mod policy;
pub mod ppo;
pub mod reinforce;
pub mod sac;
pub mod td3;
pub mod tqc;
pub mod trpo;

pub use config::{AlgoConfig, Algorithm};

/// How many gradient updates of each kind a learner has applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateCounters {
    pub critic: u64,
    pub actor: u64,
    pub target: u64,
    /// Policy updates skipped because the trust-region solve failed.
    pub skipped: u64,
}

/// A learner consumes transitions one at a time and decides itself when to update.
pub trait Learner: Send {
    fn algorithm(&self) -> Algorithm;

    /// Action in `[-1, 1]^d` (stochastic learners may return raw gaussian
    /// samples outside the cube; the agent clips before stepping).
    fn act(&mut self, obs: &[f64], explore: bool) -> Result<Vec<f64>>;

    /// Records one step; `episode_over` is true on the truncating step.
    fn observe(&mut self, t: Transition, episode_over: bool) -> Result<()>;

    /// One full update on the given transitions, bypassing the schedule:
    /// a minibatch for replay learners, an episode for on-policy learners.
    fn update_on(&mut self, transitions: &[Transition]) -> Result<()>;

    fn counters(&self) -> UpdateCounters;

    fn actor(&self) -> &Mlp<f64>;

    /// Every learnable tensor, actor first.
    fn parameters(&self) -> Vec<&Tensor<f64>>;
}

pub fn build_learner(cfg: &AlgoConfig, obs_dim: usize, act_dim: usize, rng: RngStream) -> Result<Box<dyn Learner>> {
    cfg.validate()?;
    Ok(match cfg.algorithm {
        Algorithm::Reinforce => Box::new(reinforce::Reinforce::new(cfg, obs_dim, act_dim, rng)?),
        Algorithm::Dpg => Box::new(dpg::Dpg::new(cfg, obs_dim, act_dim, rng)?),
        Algorithm::Ddpg => Box::new(ddpg::Ddpg::new(cfg, obs_dim, act_dim, rng)?),
        Algorithm::Td3 => Box::new(td3::Td3::new(cfg, obs_dim, act_dim, rng)?),
        Algorithm::Trpo => Box::new(trpo::Trpo::new(cfg, obs_dim, act_dim, rng)?),
        Algorithm::Ppo => Box::new(ppo::Ppo::new(cfg, obs_dim, act_dim, rng)?),
        Algorithm::Sac => Box::new(sac::Sac::new(cfg, obs_dim, act_dim, rng)?),
        Algorithm::Tqc => Box::new(tqc::Tqc::new(cfg, obs_dim, act_dim, rng)?),
    })
}

/// A learner bound to an environment's spaces.
pub struct Agent {
    learner: Box<dyn Learner>,
    obs_space: BoxSpace,
    action_space: BoxSpace,
    reward_scale: f64,
}

impl Agent {
    pub fn new(cfg: &AlgoConfig, obs_space: &BoxSpace, action_space: &BoxSpace, rng: RngStream) -> Result<Self> {
        let learner = build_learner(cfg, obs_space.dim(), action_space.dim(), rng)?;
        Ok(Self { learner, obs_space: obs_space.clone(), action_space: action_space.clone(), reward_scale: cfg.reward_scale })
    }

    pub fn learner(&self) -> &dyn Learner {
        self.learner.as_ref()
    }

    pub fn learner_mut(&mut self) -> &mut dyn Learner {
        self.learner.as_mut()
    }

    pub fn normalize_obs(&self, obs: &[f64]) -> Vec<f64> {
        self.obs_space.to_unit(obs)
    }

    /// Action in environment units, always inside the action box.
    pub fn act(&mut self, obs: &[f64], explore: bool) -> Result<Vec<f64>> {
        let unit = self.learner.act(&self.normalize_obs(obs), explore)?;
        Ok(self.action_space.from_unit(&unit))
    }
}

/// Returned by the per-episode callback of [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The callback asked to stop after the episode ending at `step`.
    Stopped { step: u64 },
    /// A loss, gradient or environment state became non-finite.
    Diverged { step: u64, reason: String },
}

/// One finished episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLog {
    pub global_step: u64,
    pub episodic_return: f64,
}

pub struct TrainOutcome {
    pub episodes: Vec<EpisodeLog>,
    pub status: RunStatus,
    pub steps: u64,
    pub agent: Agent,
}

/// Trains a fresh agent for `cfg.total_timesteps` environment steps.
///
/// Episodic returns use the unscaled environment reward. A non-finite value
/// anywhere ends the run with [`RunStatus::Diverged`] instead of an error.
pub fn train(
    env: &mut dyn Environment,
    cfg: &AlgoConfig,
    seed: u64,
    mut on_episode: impl FnMut(&EpisodeLog) -> Control,
) -> Result<TrainOutcome> {
    let mut root = RngStream::new(seed);
    let mut agent = Agent::new(cfg, env.observation_space(), env.action_space(), root.fork())?;
    let mut obs = agent.normalize_obs(&env.reset(Some(seed)));
    let mut episodes = Vec::new();
    let mut episodic_return = 0.0;
    let mut status = RunStatus::Completed;
    let mut step = 0;

    while step < cfg.total_timesteps {
        step += 1;
        let outcome = (|| -> Result<Option<EpisodeLog>> {
            let unit = agent.learner.act(&obs, true)?;
            let result = env.step(&agent.action_space.from_unit(&unit))?;
            episodic_return += result.reward;
            let next = agent.normalize_obs(&result.observation);
            let t = Transition {
                obs: std::mem::take(&mut obs),
                action: unit,
                reward: result.reward * agent.reward_scale,
                next_obs: next.clone(),
                done: result.terminated,
            };
            agent.learner.observe(t, result.done())?;
            if result.done() {
                let log = EpisodeLog { global_step: step, episodic_return };
                episodic_return = 0.0;
                obs = agent.normalize_obs(&env.reset(None));
                Ok(Some(log))
            } else {
                obs = next;
                Ok(None)
            }
        })();
        match outcome {
            Ok(Some(log)) => {
                episodes.push(log);
                if on_episode(&log) == Control::Stop {
                    status = RunStatus::Stopped { step };
                    break;
                }
            }
            Ok(None) => {}
            Err(Error::NonFinite { context }) => {
                status = RunStatus::Diverged { step, reason: format!("non-finite value in {context}") };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome { episodes, status, steps: step, agent })
}

/// States, actions and rewards of one evaluation episode, in environment units.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    /// The state each action responded to.
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// `info` of the final step.
    pub final_info: std::collections::BTreeMap<String, Vec<f64>>,
}

impl EpisodeTrace {
    pub fn episodic_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Runs one full episode with `agent` without learning. `explore` selects
/// the behaviour policy (with its noise) instead of the greedy one.
pub fn rollout_episode(agent: &mut Agent, env: &mut dyn Environment, seed: Option<u64>, explore: bool) -> Result<EpisodeTrace> {
    let mut obs = env.reset(seed);
    let mut trace = EpisodeTrace { observations: Vec::new(), actions: Vec::new(), rewards: Vec::new(), final_info: Default::default() };
    loop {
        let action = agent.act(&obs, explore)?;
        let result = env.step(&action)?;
        let done = result.done();
        trace.observations.push(std::mem::replace(&mut obs, result.observation));
        trace.actions.push(action);
        trace.rewards.push(result.reward);
        if done {
            trace.final_info = result.info;
            return Ok(trace);
        }
    }
}

// ---- helpers shared by the learners ----

/// `Q(s, a)` recorded on `g`; returns the output and the parameter leaves.
pub(crate) fn critic_forward(g: &mut Graph<f64>, net: &Mlp<f64>, obs: Var, act: Var, mode: Params) -> Result<(Var, Vec<Var>)> {
    let input = g.concat_cols(&[obs, act])?;
    let f = net.forward(g, input, mode)?;
    Ok((f.output, f.params))
}

/// Graph-free `Q(s, a)`.
pub(crate) fn critic_predict(net: &Mlp<f64>, obs: &Tensor<f64>, act: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (n, a, b) = (obs.rows(), obs.cols(), act.cols());
    let mut data = Vec::with_capacity(n * (a + b));
    for i in 0..n {
        data.extend_from_slice(obs.row_slice(i));
        data.extend_from_slice(act.row_slice(i));
    }
    net.predict(&Tensor::from_rows(n, a + b, data)?)
}

/// Backpropagates `loss`, optionally clips, and steps `opt` on `net`. Returns the loss.
pub(crate) fn apply_gradients(
    g: &mut Graph<f64>,
    loss: Var,
    leaves: &[Var],
    net: &mut Mlp<f64>,
    opt: &mut Optimizer<f64>,
    max_grad_norm: Option<f64>,
) -> Result<f64> {
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    let mut grads = grads.collect(leaves);
    if let Some(max) = max_grad_norm {
        clip_grad_norm(&mut grads, max);
    }
    opt.step(net.params_mut(), &grads)?;
    Ok(value)
}

/// `-mean Q(s, π(s))` descent step on a deterministic actor against an
/// arbitrary frozen critic.
pub(crate) fn deterministic_actor_step(
    actor: &mut Mlp<f64>,
    opt: &mut Optimizer<f64>,
    obs: &Tensor<f64>,
    critic: impl FnOnce(&mut Graph<f64>, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.constant(obs.clone());
    let pi = actor.forward(&mut g, s, Params::Trainable)?;
    let q = critic(&mut g, s, pi.output)?;
    let m = g.mean(q);
    let loss = g.neg(m);
    apply_gradients(&mut g, loss, &pi.params, actor, opt, None)
}

/// Gaussian exploration noise added to a deterministic action, clipped to the cube.
pub(crate) fn noisy_action(mean: &[f64], std: f64, rng: &mut RngStream) -> Vec<f64> {
    mean.iter().map(|m| (m + std * rng.standard_normal()).clamp(-1.0, 1.0)).collect()
}

pub(crate) fn uniform_action(dim: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}
