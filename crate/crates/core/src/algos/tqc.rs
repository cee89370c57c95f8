//! Truncated quantile critics: distributional twin-style critics whose pooled
//! target drops the largest atoms to curb overestimation.

use super::policy::{gaussian_actor, normal_tensor, q_network, sample_squashed, squashed_sample};
use super::sac::EntropyCoefficient;
use super::{apply_gradients, critic_forward, critic_predict, uniform_action, AlgoConfig, Algorithm, Learner, UpdateCounters};
use crate::autodiff::{quantile_fractions, Graph};
use crate::error::Result;
use crate::nn::{Mlp, Params};
use crate::optim::{soft_update, Optimizer};
use crate::rng::RngStream;
use crate::rollout::{Minibatch, ReplayBuffer, Transition};
use crate::tensor::Tensor;

/// Huber threshold of the quantile loss.
pub const KAPPA: f64 = 1.0;

pub struct Tqc {
    pub actor: Mlp<f64>,
    pub critics: Vec<Mlp<f64>>,
    pub critic_targets: Vec<Mlp<f64>>,
    pub alpha: EntropyCoefficient,
    actor_opt: Optimizer<f64>,
    critic_opts: Vec<Optimizer<f64>>,
    buffer: ReplayBuffer,
    cfg: AlgoConfig,
    act_dim: usize,
    steps: u64,
    rng: RngStream,
    counters: UpdateCounters,
}

impl Tqc {
    pub fn new(cfg: &AlgoConfig, obs_dim: usize, act_dim: usize, mut rng: RngStream) -> Result<Self> {
        let h = cfg.actor_critic_layer_size;
        let actor = gaussian_actor(obs_dim, act_dim, h, true, &mut rng)?;
        let critics = (0..cfg.n_critics).map(|_| q_network(obs_dim, act_dim, h, cfg.n_quantiles, &mut rng)).collect::<Result<Vec<_>>>()?;
        let critic_opts = critics.iter().map(|c| Optimizer::adam(cfg.critic_adam_lr, c.params())).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            actor_opt: Optimizer::adam(cfg.actor_adam_lr, actor.params())?,
            critic_opts,
            alpha: EntropyCoefficient::new(cfg.alpha, cfg.autotune_alpha, cfg.alpha_adam_lr, act_dim)?,
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

    /// Atoms kept from the pooled target distribution of each row.
    pub fn kept_atoms(&self) -> usize {
        self.cfg.n_critics * (self.cfg.n_quantiles - self.cfg.top_quantiles_to_drop)
    }

    /// Pools every target critic's quantiles at `(s', a')`, sorts each row,
    /// keeps the smallest [`Tqc::kept_atoms`] and applies the soft Bellman
    /// backup to each: `[B, kept]`.
    pub fn truncated_target(&self, batch: &Minibatch, noise: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (next_a, logp) = sample_squashed(&self.actor, &batch.next_obs, noise)?;
        let per_critic = self
            .critic_targets
            .iter()
            .map(|c| critic_predict(c, &batch.next_obs, &next_a))
            .collect::<Result<Vec<_>>>()?;
        let kept = self.kept_atoms();
        let alpha = self.alpha.value();
        let mut out = Vec::with_capacity(batch.len() * kept);
        let mut pooled = Vec::with_capacity(self.cfg.n_critics * self.cfg.n_quantiles);
        for i in 0..batch.len() {
            pooled.clear();
            for z in &per_critic {
                pooled.extend_from_slice(z.row_slice(i));
            }
            pooled.sort_by(f64::total_cmp);
            let live = self.cfg.gamma * (1.0 - batch.dones.values()[i]);
            let r = batch.rewards.values()[i];
            let ent = alpha * logp.values()[i];
            out.extend(pooled[..kept].iter().map(|z| r + live * (z - ent)));
        }
        Tensor::from_rows(batch.len(), kept, out)
    }

    fn critic_update(&mut self, batch: &Minibatch) -> Result<()> {
        let noise = normal_tensor(&mut self.rng, batch.len(), self.act_dim);
        let target = self.truncated_target(batch, &noise)?;
        target.ensure_finite("quantile target")?;
        let fractions = quantile_fractions::<f64>(self.cfg.n_quantiles);
        for k in 0..self.critics.len() {
            let mut g = Graph::new();
            let s = g.constant(batch.obs.clone());
            let a = g.constant(batch.actions.clone());
            let (z, leaves) = critic_forward(&mut g, &self.critics[k], s, a, Params::Trainable)?;
            let loss = g.quantile_huber_loss(z, target.clone(), fractions.clone(), KAPPA)?;
            apply_gradients(&mut g, loss, &leaves, &mut self.critics[k], &mut self.critic_opts[k], None)?;
        }
        self.counters.critic += 1;
        Ok(())
    }

    /// Actor step on `mean(α ln π - mean_{k,j} Z_kj(s, a))`, then the α step.
    fn actor_update(&mut self, obs: &Tensor<f64>) -> Result<()> {
        let noise = normal_tensor(&mut self.rng, obs.rows(), self.act_dim);
        let mut g = Graph::new();
        let s = g.constant(obs.clone());
        let f = self.actor.forward(&mut g, s, Params::Trainable)?;
        let (a, lp) = squashed_sample(&mut g, f.output, f.log_std.expect("gaussian head"), &noise)?;
        let mut heads = Vec::with_capacity(self.critics.len());
        for c in &self.critics {
            heads.push(critic_forward(&mut g, c, s, a, Params::Frozen)?.0);
        }
        let all = g.concat_cols(&heads)?;
        let q = g.mean_cols(all);
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
        for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
            soft_update(t.params_mut(), c.params(), self.cfg.tau)?;
        }
        self.counters.target += 1;
        Ok(())
    }
}

impl Learner for Tqc {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Tqc
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
