//! Soft actor-critic with a squashed gaussian policy and entropy tuning.

use super::policy::{gaussian_actor, normal_tensor, q_network, sample_squashed, squashed_sample};
use super::{apply_gradients, critic_forward, critic_predict, uniform_action, AlgoConfig, Algorithm, Learner, UpdateCounters};
use crate::autodiff::Graph;
use crate::error::Result;
use crate::nn::{Mlp, Params};
use crate::optim::{soft_update, Optimizer};
use crate::rng::RngStream;
use crate::rollout::{Minibatch, ReplayBuffer, Transition};
use crate::tensor::Tensor;

/// Learnable `ln α` with its own Adam state, driven towards a target entropy.
#[derive(Debug, Clone)]
pub struct EntropyCoefficient {
    log_alpha: Vec<Tensor<f64>>,
    opt: Option<Optimizer<f64>>,
    pub target_entropy: f64,
}

impl EntropyCoefficient {
    pub fn new(alpha: f64, autotune: bool, learning_rate: f64, act_dim: usize) -> Result<Self> {
        let log_alpha = vec![Tensor::scalar(alpha.max(f64::MIN_POSITIVE).ln())];
        let opt = if autotune { Some(Optimizer::adam(learning_rate, &log_alpha)?) } else { None };
        Ok(Self { log_alpha, opt, target_entropy: -(act_dim as f64) })
    }

    /// A fixed coefficient (zero allowed).
    pub fn fixed(alpha: f64) -> Self {
        Self { log_alpha: vec![Tensor::scalar(alpha.ln())], opt: None, target_entropy: 0.0 }
    }

    pub fn parameters(&self) -> &[Tensor<f64>] {
        &self.log_alpha
    }

    pub fn value(&self) -> f64 {
        self.log_alpha[0].item().exp()
    }

    /// One step on `-α · mean(ln π + H̄)` given fresh log-probs.
    pub fn update(&mut self, log_probs: &[f64]) -> Result<()> {
        let Some(opt) = self.opt.as_mut() else { return Ok(()) };
        let m = log_probs.iter().sum::<f64>() / log_probs.len() as f64 + self.target_entropy;
        let grad = Tensor::scalar(-self.log_alpha[0].item().exp() * m);
        grad.ensure_finite("entropy coefficient gradient")?;
        opt.step(&mut self.log_alpha, &[grad])
    }
}

pub struct Sac {
    pub actor: Mlp<f64>,
    pub critics: [Mlp<f64>; 2],
    pub critic_targets: [Mlp<f64>; 2],
    pub alpha: EntropyCoefficient,
    actor_opt: Optimizer<f64>,
    critic_opts: [Optimizer<f64>; 2],
    buffer: ReplayBuffer,
    cfg: AlgoConfig,
    act_dim: usize,
    steps: u64,
    rng: RngStream,
    counters: UpdateCounters,
}

impl Sac {
    pub fn new(cfg: &AlgoConfig, obs_dim: usize, act_dim: usize, mut rng: RngStream) -> Result<Self> {
        let h = cfg.actor_critic_layer_size;
        let actor = gaussian_actor(obs_dim, act_dim, h, true, &mut rng)?;
        let critics = [q_network(obs_dim, act_dim, h, 1, &mut rng)?, q_network(obs_dim, act_dim, h, 1, &mut rng)?];
        Ok(Self {
            actor_opt: Optimizer::adam(cfg.policy_lr, actor.params())?,
            critic_opts: [Optimizer::adam(cfg.q_lr, critics[0].params())?, Optimizer::adam(cfg.q_lr, critics[1].params())?],
            alpha: EntropyCoefficient::new(cfg.alpha, cfg.autotune_alpha, cfg.q_lr, act_dim)?,
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

    /// `y = r + γ(1 - d)(min_k Q'_k(s', a') - α ln π(a'|s'))` with
    /// `a' = tanh(μ(s') + σ ξ)` for the supplied standard-normal `noise`.
    pub fn soft_target(&self, batch: &Minibatch, noise: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (next_a, logp) = sample_squashed(&self.actor, &batch.next_obs, noise)?;
        let q1 = critic_predict(&self.critic_targets[0], &batch.next_obs, &next_a)?;
        let q2 = critic_predict(&self.critic_targets[1], &batch.next_obs, &next_a)?;
        let alpha = self.alpha.value();
        let y = (0..batch.len())
            .map(|i| {
                let soft = q1.values()[i].min(q2.values()[i]) - alpha * logp.values()[i];
                batch.rewards.values()[i] + self.cfg.gamma * (1.0 - batch.dones.values()[i]) * soft
            })
            .collect();
        Tensor::from_rows(batch.len(), 1, y)
    }

    fn critic_update(&mut self, batch: &Minibatch) -> Result<()> {
        let noise = normal_tensor(&mut self.rng, batch.len(), self.act_dim);
        let y = self.soft_target(batch, &noise)?;
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
        Ok(())
    }

    /// Actor step on `mean(α ln π - min_k Q_k)`, then the α step.
    fn actor_update(&mut self, obs: &Tensor<f64>) -> Result<()> {
        let noise = normal_tensor(&mut self.rng, obs.rows(), self.act_dim);
        let mut g = Graph::new();
        let s = g.constant(obs.clone());
        let f = self.actor.forward(&mut g, s, Params::Trainable)?;
        let (a, lp) = squashed_sample(&mut g, f.output, f.log_std.expect("gaussian head"), &noise)?;
        let (q1, _) = critic_forward(&mut g, &self.critics[0], s, a, Params::Frozen)?;
        let (q2, _) = critic_forward(&mut g, &self.critics[1], s, a, Params::Frozen)?;
        let q = g.minimum(q1, q2)?;
        let weighted = g.scale(lp, self.alpha.value());
        let diff = g.sub(weighted, q)?;
        let loss = g.mean(diff);
        apply_gradients(&mut g, loss, &f.params, &mut self.actor, &mut self.actor_opt, None)?;
        self.counters.actor += 1;

        let fresh = normal_tensor(&mut self.rng, obs.rows(), self.act_dim);
        let (_, logp) = sample_squashed(&self.actor, obs, &fresh)?;
        self.alpha.update(logp.values())
    }

    fn update_targets(&mut self) -> Result<()> {
        for k in 0..2 {
            soft_update(self.critic_targets[k].params_mut(), self.critics[k].params(), self.cfg.tau)?;
        }
        self.counters.target += 1;
        Ok(())
    }
}

impl Learner for Sac {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Sac
    }

    fn act(&mut self, obs: &[f64], explore: bool) -> Result<Vec<f64>> {
        if explore && self.steps < self.cfg.learning_starts {
            return Ok(uniform_action(self.act_dim, &mut self.rng));
        }
        let s = Tensor::row(obs);
        if !explore {
            return Ok(self.actor.predict(&s)?.values().iter().map(|m| m.tanh()).collect());
        }
        let noise = normal_tensor(&mut self.rng, 1, self.act_dim);
        Ok(sample_squashed(&self.actor, &s, &noise)?.0.into_values())
    }

    fn observe(&mut self, t: Transition, _episode_over: bool) -> Result<()> {
        self.steps += 1;
        self.buffer.push(&t)?;
        if self.steps <= self.cfg.learning_starts || self.buffer.len() < self.cfg.batch_size {
            return Ok(());
        }
        let batch = self.buffer.sample(self.cfg.batch_size)?;
        self.critic_update(&batch)?;
        let f = self.cfg.policy_frequency as u64;
        if self.steps % f == 0 {
            for _ in 0..f {
                self.actor_update(&batch.obs)?;
            }
        }
        if self.steps % self.cfg.target_network_frequency as u64 == 0 {
            self.update_targets()?;
        }
        Ok(())
    }

    fn update_on(&mut self, transitions: &[Transition]) -> Result<()> {
        let batch = Minibatch::from_transitions(transitions)?;
        self.critic_update(&batch)?;
        self.actor_update(&batch.obs)?;
        self.update_targets()
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
            .chain(&self.critic_targets)
            .flat_map(|n| n.params())
            .chain(self.alpha.parameters())
            .collect()
    }
}
