//! DDPG: deterministic actor-critic with replay and soft-updated targets.

use super::policy::{deterministic_actor, q_network};
use super::{
    apply_gradients, critic_forward, critic_predict, deterministic_actor_step, noisy_action, uniform_action, AlgoConfig, Algorithm, Learner,
    UpdateCounters,
};
use crate::autodiff::Graph;
use crate::error::Result;
use crate::nn::{Mlp, Params};
use crate::optim::{soft_update, Optimizer};
use crate::rng::RngStream;
use crate::rollout::{Minibatch, ReplayBuffer, Transition};
use crate::tensor::Tensor;

pub struct Ddpg {
    pub actor: Mlp<f64>,
    pub critic: Mlp<f64>,
    pub actor_target: Mlp<f64>,
    pub critic_target: Mlp<f64>,
    actor_opt: Optimizer<f64>,
    critic_opt: Optimizer<f64>,
    buffer: ReplayBuffer,
    cfg: AlgoConfig,
    act_dim: usize,
    steps: u64,
    rng: RngStream,
    counters: UpdateCounters,
}

impl Ddpg {
    pub fn new(cfg: &AlgoConfig, obs_dim: usize, act_dim: usize, mut rng: RngStream) -> Result<Self> {
        let h = cfg.actor_critic_layer_size;
        let actor = deterministic_actor(obs_dim, act_dim, h, &mut rng)?;
        let critic = q_network(obs_dim, act_dim, h, 1, &mut rng)?;
        Ok(Self {
            actor_opt: Optimizer::adam(cfg.learning_rate, actor.params())?,
            critic_opt: Optimizer::adam(cfg.learning_rate, critic.params())?,
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            buffer: ReplayBuffer::new(cfg.buffer_size, obs_dim, act_dim, rng.fork())?,
            cfg: cfg.clone(),
            act_dim,
            steps: 0,
            rng,
            counters: UpdateCounters::default(),
        })
    }

    /// `y = r + γ(1 - d) Q'(s', μ'(s'))` from the target networks.
    pub fn targets(&self, batch: &Minibatch) -> Result<Tensor<f64>> {
        let next_a = self.actor_target.predict(&batch.next_obs)?;
        let q_next = critic_predict(&self.critic_target, &batch.next_obs, &next_a)?;
        let y = (0..batch.len())
            .map(|i| batch.rewards.values()[i] + self.cfg.gamma * (1.0 - batch.dones.values()[i]) * q_next.values()[i])
            .collect();
        Tensor::from_rows(batch.len(), 1, y)
    }

    /// Critic step, optional actor step, then a soft target update.
    pub fn update(&mut self, batch: &Minibatch, with_actor: bool) -> Result<()> {
        let y = self.targets(batch)?;
        let mut g = Graph::new();
        let s = g.constant(batch.obs.clone());
        let a = g.constant(batch.actions.clone());
        let (q, leaves) = critic_forward(&mut g, &self.critic, s, a, Params::Trainable)?;
        let y = g.constant(y);
        let diff = g.sub(q, y)?;
        let sq = g.square(diff);
        let loss = g.mean(sq);
        apply_gradients(&mut g, loss, &leaves, &mut self.critic, &mut self.critic_opt, None)?;
        self.counters.critic += 1;

        if with_actor {
            let critic = &self.critic;
            deterministic_actor_step(&mut self.actor, &mut self.actor_opt, &batch.obs, |g, s, a| {
                critic_forward(g, critic, s, a, Params::Frozen).map(|(q, _)| q)
            })?;
            self.counters.actor += 1;
        }
        soft_update(self.actor_target.params_mut(), self.actor.params(), self.cfg.tau)?;
        soft_update(self.critic_target.params_mut(), self.critic.params(), self.cfg.tau)?;
        self.counters.target += 1;
        Ok(())
    }
}

impl Learner for Ddpg {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Ddpg
    }

    fn act(&mut self, obs: &[f64], explore: bool) -> Result<Vec<f64>> {
        if explore && self.steps < self.cfg.learning_starts {
            return Ok(uniform_action(self.act_dim, &mut self.rng));
        }
        let mean = self.actor.predict(&Tensor::row(obs))?.into_values();
        Ok(if explore { noisy_action(&mean, self.cfg.exploration_noise, &mut self.rng) } else { mean })
    }

    fn observe(&mut self, t: Transition, _episode_over: bool) -> Result<()> {
        self.steps += 1;
        self.buffer.push(&t)?;
        if self.steps > self.cfg.learning_starts && self.buffer.len() >= self.cfg.batch_size {
            let batch = self.buffer.sample(self.cfg.batch_size)?;
            self.update(&batch, self.steps % self.cfg.policy_frequency as u64 == 0)?;
        }
        Ok(())
    }

    fn update_on(&mut self, transitions: &[Transition]) -> Result<()> {
        self.update(&Minibatch::from_transitions(transitions)?, true)
    }

    fn counters(&self) -> UpdateCounters {
        self.counters
    }

    fn actor(&self) -> &Mlp<f64> {
        &self.actor
    }

    fn parameters(&self) -> Vec<&Tensor<f64>> {
        [&self.actor, &self.critic, &self.actor_target, &self.critic_target].into_iter().flat_map(|n| n.params()).collect()
    }
}
