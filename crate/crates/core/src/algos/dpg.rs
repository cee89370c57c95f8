//! Deterministic policy gradient: per-step actor-critic updates on the
//! current transition, without replay or target networks.

use super::policy::{deterministic_actor, q_network};
use super::{apply_gradients, critic_forward, critic_predict, deterministic_actor_step, noisy_action, AlgoConfig, Algorithm, Learner, UpdateCounters};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::nn::{Mlp, Params};
use crate::optim::Optimizer;
use crate::rng::RngStream;
use crate::rollout::{Minibatch, Transition};
use crate::tensor::Tensor;

pub struct Dpg {
    pub actor: Mlp<f64>,
    pub critic: Mlp<f64>,
    actor_opt: Optimizer<f64>,
    critic_opt: Optimizer<f64>,
    gamma: f64,
    exploration_noise: f64,
    policy_frequency: u64,
    steps: u64,
    rng: RngStream,
    counters: UpdateCounters,
}

impl Dpg {
    pub fn new(cfg: &AlgoConfig, obs_dim: usize, act_dim: usize, mut rng: RngStream) -> Result<Self> {
        let h = cfg.actor_critic_layer_size;
        let actor = deterministic_actor(obs_dim, act_dim, h, &mut rng)?;
        let critic = q_network(obs_dim, act_dim, h, 1, &mut rng)?;
        Ok(Self {
            actor_opt: Optimizer::adam(cfg.learning_rate, actor.params())?,
            critic_opt: Optimizer::adam(cfg.learning_rate, critic.params())?,
            actor,
            critic,
            gamma: cfg.gamma,
            exploration_noise: cfg.exploration_noise,
            policy_frequency: cfg.policy_frequency as u64,
            steps: 0,
            rng,
            counters: UpdateCounters::default(),
        })
    }

    /// `y = r + γ(1 - d) Q(s', π(s'))` from the online networks.
    pub fn targets(&self, batch: &Minibatch) -> Result<Tensor<f64>> {
        let next_a = self.actor.predict(&batch.next_obs)?;
        let q_next = critic_predict(&self.critic, &batch.next_obs, &next_a)?;
        let y = (0..batch.len())
            .map(|i| batch.rewards.values()[i] + self.gamma * (1.0 - batch.dones.values()[i]) * q_next.values()[i])
            .collect();
        Tensor::from_rows(batch.len(), 1, y)
    }

    /// Critic regression step towards [`Dpg::targets`].
    pub fn critic_update(&mut self, batch: &Minibatch) -> Result<f64> {
        let y = self.targets(batch)?;
        let mut g = Graph::new();
        let s = g.constant(batch.obs.clone());
        let a = g.constant(batch.actions.clone());
        let (q, leaves) = critic_forward(&mut g, &self.critic, s, a, Params::Trainable)?;
        let y = g.constant(y);
        let diff = g.sub(q, y)?;
        let sq = g.square(diff);
        let loss = g.mean(sq);
        self.counters.critic += 1;
        apply_gradients(&mut g, loss, &leaves, &mut self.critic, &mut self.critic_opt, None)
    }

    /// Ascent on `Q(s, π(s))` with the current critic.
    pub fn actor_update(&mut self, obs: &Tensor<f64>) -> Result<f64> {
        let critic = &self.critic;
        self.counters.actor += 1;
        deterministic_actor_step(&mut self.actor, &mut self.actor_opt, obs, |g, s, a| {
            critic_forward(g, critic, s, a, Params::Frozen).map(|(q, _)| q)
        })
    }

    /// Ascent on an arbitrary frozen critic `q(g, s, a)`.
    pub fn actor_update_against(
        &mut self,
        obs: &Tensor<f64>,
        q: impl FnOnce(&mut Graph<f64>, Var, Var) -> Result<Var>,
    ) -> Result<f64> {
        deterministic_actor_step(&mut self.actor, &mut self.actor_opt, obs, q)
    }

    fn update(&mut self, batch: &Minibatch, with_actor: bool) -> Result<()> {
        self.critic_update(batch)?;
        if with_actor {
            self.actor_update(&batch.obs)?;
        }
        Ok(())
    }
}

impl Learner for Dpg {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Dpg
    }

    fn act(&mut self, obs: &[f64], explore: bool) -> Result<Vec<f64>> {
        let mean = self.actor.predict(&Tensor::row(obs))?.into_values();
        Ok(if explore { noisy_action(&mean, self.exploration_noise, &mut self.rng) } else { mean })
    }

    fn observe(&mut self, t: Transition, _episode_over: bool) -> Result<()> {
        self.steps += 1;
        let batch = Minibatch::from_transitions(std::slice::from_ref(&t))?;
        self.update(&batch, self.steps % self.policy_frequency == 0)
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
        self.actor.params().iter().chain(self.critic.params()).collect()
    }
}
