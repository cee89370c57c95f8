//! TD3: twin critics, target-policy smoothing and delayed actor updates.

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

pub struct Td3 {
    pub actor: Mlp<f64>,
    pub critics: [Mlp<f64>; 2],
    pub actor_target: Mlp<f64>,
    pub critic_targets: [Mlp<f64>; 2],
    actor_opt: Optimizer<f64>,
    critic_opts: [Optimizer<f64>; 2],
    buffer: ReplayBuffer,
    cfg: AlgoConfig,
    act_dim: usize,
    steps: u64,
    rng: RngStream,
    counters: UpdateCounters,
}

impl Td3 {
    pub fn new(cfg: &AlgoConfig, obs_dim: usize, act_dim: usize, mut rng: RngStream) -> Result<Self> {
        let h = cfg.actor_critic_layer_size;
        let actor = deterministic_actor(obs_dim, act_dim, h, &mut rng)?;
        let critics = [q_network(obs_dim, act_dim, h, 1, &mut rng)?, q_network(obs_dim, act_dim, h, 1, &mut rng)?];
        Ok(Self {
            actor_opt: Optimizer::adam(cfg.learning_rate, actor.params())?,
            critic_opts: [Optimizer::adam(cfg.learning_rate, critics[0].params())?, Optimizer::adam(cfg.learning_rate, critics[1].params())?],
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            buffer: ReplayBuffer::new(cfg.buffer_size, obs_dim, act_dim, rng.fork())?,
            cfg: cfg.clone(),
            act_dim,
            steps: 0,
            rng,
            counters: UpdateCounters::default(),
        })
    }

    /// `n` draws of `clip(N(0, σ_π), ±σ_clip)`.
    pub fn smoothing_noise(&mut self, n: usize) -> Vec<f64> {
        let (std, clip) = (self.cfg.policy_noise, self.cfg.noise_clip);
        (0..n).map(|_| (std * self.rng.standard_normal()).clamp(-clip, clip)).collect()
    }

    /// Smoothed target actions `clip(μ'(s') + noise, -1, 1)`.
    pub fn target_actions(&mut self, next_obs: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut a = self.actor_target.predict(next_obs)?;
        let noise = self.smoothing_noise(a.len());
        for (v, n) in a.values_mut().iter_mut().zip(noise) {
            *v = (*v + n).clamp(-1.0, 1.0);
        }
        Ok(a)
    }

    /// Per-critic targets and the clipped double-Q target built from them.
    pub fn targets(&mut self, batch: &Minibatch) -> Result<([Tensor<f64>; 2], Tensor<f64>)> {
        let next_a = self.target_actions(&batch.next_obs)?;
        let q1 = critic_predict(&self.critic_targets[0], &batch.next_obs, &next_a)?;
        let q2 = critic_predict(&self.critic_targets[1], &batch.next_obs, &next_a)?;
        let y_of = |q: &[f64]| -> Vec<f64> {
            (0..batch.len())
                .map(|i| batch.rewards.values()[i] + self.cfg.gamma * (1.0 - batch.dones.values()[i]) * q[i])
                .collect()
        };
        let (y1, y2) = (y_of(q1.values()), y_of(q2.values()));
        let ymin: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a.min(*b)).collect();
        let n = batch.len();
        Ok(([Tensor::from_rows(n, 1, y1)?, Tensor::from_rows(n, 1, y2)?], Tensor::from_rows(n, 1, ymin)?))
    }

    /// Twin critic step; with `delayed`, also the actor step and soft target update.
    pub fn update(&mut self, batch: &Minibatch, delayed: bool) -> Result<()> {
        let (_, y) = self.targets(batch)?;
        for k in 0..2 {
            let mut g = Graph::new();
            let s = g.constant(batch.obs.clone());
            let a = g.constant(batch.actions.clone());
            let (q, leaves) = critic_forward(&mut g, &self.critics[k], s, a, Params::Trainable)?;
            let yv = g.constant(y.clone());
            let diff = g.sub(q, yv)?;
            let sq = g.square(diff);
            let loss = g.mean(sq);
            apply_gradients(&mut g, loss, &leaves, &mut self.critics[k], &mut self.critic_opts[k], None)?;
        }
        self.counters.critic += 1;

        if delayed {
            let critic = &self.critics[0];
            deterministic_actor_step(&mut self.actor, &mut self.actor_opt, &batch.obs, |g, s, a| {
                critic_forward(g, critic, s, a, Params::Frozen).map(|(q, _)| q)
            })?;
            self.counters.actor += 1;
            soft_update(self.actor_target.params_mut(), self.actor.params(), self.cfg.tau)?;
            for k in 0..2 {
                soft_update(self.critic_targets[k].params_mut(), self.critics[k].params(), self.cfg.tau)?;
            }
            self.counters.target += 1;
        }
        Ok(())
    }
}

impl Learner for Td3 {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Td3
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
        std::iter::once(&self.actor)
            .chain(&self.critics)
            .chain(std::iter::once(&self.actor_target))
            .chain(&self.critic_targets)
            .flat_map(|n| n.params())
            .collect()
    }
}
