//! PPO with the clipped surrogate, plus the episode preparation shared with TRPO.

use super::policy::{gaussian_actor, gaussian_entropy_var, gaussian_log_prob, value_network};
use super::{AlgoConfig, Algorithm, Learner, UpdateCounters};
use crate::autodiff::Graph;
use crate::error::Result;
use crate::nn::{Mlp, Params};
use crate::optim::{clip_grad_norm, Optimizer};
use crate::rng::RngStream;
use crate::rollout::{gae, normalize, Transition, TrajectoryBatch};
use crate::tensor::Tensor;

/// A collected rollout with everything the trust-region updates need.
#[derive(Debug, Clone)]
pub struct OnPolicyBatch {
    pub obs: Tensor<f64>,
    pub actions: Tensor<f64>,
    /// Behaviour-policy log-probs `[n]`.
    pub old_log_probs: Vec<f64>,
    /// Behaviour-policy means `[n, d]` and log-std `[d]`.
    pub old_mean: Tensor<f64>,
    pub old_log_std: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl OnPolicyBatch {
    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx` of every per-step field.
    pub fn select(&self, idx: &[usize]) -> Result<OnPolicyBatch> {
        Ok(OnPolicyBatch {
            obs: gather_rows(&self.obs, idx)?,
            actions: gather_rows(&self.actions, idx)?,
            old_log_probs: idx.iter().map(|&i| self.old_log_probs[i]).collect(),
            old_mean: gather_rows(&self.old_mean, idx)?,
            old_log_std: self.old_log_std.clone(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
        })
    }
}

pub(crate) fn gather_rows(t: &Tensor<f64>, idx: &[usize]) -> Result<Tensor<f64>> {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| t.row_slice(i)).collect();
    Tensor::stack_rows(&rows)
}

pub(crate) fn column(values: &[f64]) -> Result<Tensor<f64>> {
    Tensor::from_rows(values.len(), 1, values.to_vec())
}

/// `ln π(a|s)` per row under the current parameters, without gradients.
pub fn log_probs(policy: &Mlp<f64>, obs: &Tensor<f64>, actions: &Tensor<f64>) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let s = g.constant(obs.clone());
    let f = policy.forward(&mut g, s, Params::Frozen)?;
    let a = g.constant(actions.clone());
    let lp = gaussian_log_prob(&mut g, f.output, f.log_std.expect("gaussian head"), a)?;
    Ok(g.value(lp).values().to_vec())
}

/// Values, GAE advantages and returns per episode, bootstrapping `V(s_T)`
/// at truncation; behaviour log-probs from the current policy.
pub fn prepare_batch(policy: &Mlp<f64>, value: &Mlp<f64>, batch: &TrajectoryBatch, cfg: &AlgoConfig) -> Result<OnPolicyBatch> {
    let ts = &batch.transitions;
    let obs = Tensor::stack_rows(&ts.iter().map(|t| t.obs.as_slice()).collect::<Vec<_>>())?;
    let actions = Tensor::stack_rows(&ts.iter().map(|t| t.action.as_slice()).collect::<Vec<_>>())?;
    let values = value.predict(&obs)?.into_values();
    let mut spans = batch.episodes();
    let closed = spans.last().map_or(0, |s| s.1);
    if closed < ts.len() {
        spans.push((closed, ts.len()));
    }
    let mut advantages = Vec::with_capacity(ts.len());
    let mut returns = Vec::with_capacity(ts.len());
    for (start, end) in spans {
        let last = &ts[end - 1];
        let bootstrap = value.predict(&Tensor::row(&last.next_obs))?.item();
        let mut v = values[start..end].to_vec();
        v.push(bootstrap);
        let rewards: Vec<f64> = ts[start..end].iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = ts[start..end].iter().map(|t| t.done).collect();
        let (adv, ret) = gae(&rewards, &v, &dones, cfg.gamma, cfg.gae_lambda)?;
        advantages.extend(adv);
        returns.extend(ret);
    }
    if cfg.norm_adv {
        normalize(&mut advantages);
    }
    Ok(OnPolicyBatch {
        old_log_probs: log_probs(policy, &obs, &actions)?,
        old_mean: policy.predict(&obs)?,
        old_log_std: policy.log_std().expect("gaussian head"),
        obs,
        actions,
        advantages,
        returns,
    })
}

/// Splits a shuffled `0..n` into `k` nearly equal minibatches.
pub(crate) fn minibatch_indices(n: usize, k: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let k = k.clamp(1, n.max(1));
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Sample estimate `mean((r - 1) - ln r)` of `KL(old ‖ new)`.
pub fn approx_kl(old_log_probs: &[f64], new_log_probs: &[f64]) -> f64 {
    let n = old_log_probs.len().max(1) as f64;
    old_log_probs.iter().zip(new_log_probs).map(|(o, n)| (n - o).exp_m1() - (n - o)).sum::<f64>() / n
}

/// Clipped surrogate `mean(min(r Â, clip(r, 1 ± ε) Â))` for given ratios.
pub fn clipped_surrogate(ratios: &[f64], advantages: &[f64], clip: f64) -> f64 {
    ratios
        .iter()
        .zip(advantages)
        .map(|(r, a)| (r * a).min(r.clamp(1.0 - clip, 1.0 + clip) * a))
        .sum::<f64>()
        / ratios.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoLosses {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

pub struct Ppo {
    pub policy: Mlp<f64>,
    pub value: Mlp<f64>,
    policy_opt: Optimizer<f64>,
    value_opt: Optimizer<f64>,
    cfg: AlgoConfig,
    rollout: TrajectoryBatch,
    rng: RngStream,
    counters: UpdateCounters,
}

impl Ppo {
    pub fn new(cfg: &AlgoConfig, obs_dim: usize, act_dim: usize, mut rng: RngStream) -> Result<Self> {
        let h = cfg.actor_critic_layer_size;
        let policy = gaussian_actor(obs_dim, act_dim, h, false, &mut rng)?;
        let value = value_network(obs_dim, h, &mut rng)?;
        Ok(Self {
            policy_opt: Optimizer::adam(cfg.learning_rate, policy.params())?,
            value_opt: Optimizer::adam(cfg.learning_rate, value.params())?,
            policy,
            value,
            cfg: cfg.clone(),
            rollout: TrajectoryBatch::new(),
            rng,
            counters: UpdateCounters::default(),
        })
    }

    /// One gradient step on `-L^CLIP + c₁ L^VF - c₂ S` over a minibatch.
    pub fn minibatch_step(&mut self, mb: &OnPolicyBatch) -> Result<PpoLosses> {
        let mut g = Graph::new();
        let s = g.constant(mb.obs.clone());
        let f = self.policy.forward(&mut g, s, Params::Trainable)?;
        let log_std = f.log_std.expect("gaussian head");
        let a = g.constant(mb.actions.clone());
        let lp = gaussian_log_prob(&mut g, f.output, log_std, a)?;
        let old = g.constant(column(&mb.old_log_probs)?);
        let log_ratio = g.sub(lp, old)?;
        let ratio = g.exp(log_ratio);
        let adv = g.constant(column(&mb.advantages)?);
        let s1 = g.mul(ratio, adv)?;
        let clipped = g.clamp(ratio, 1.0 - self.cfg.clip_coef, 1.0 + self.cfg.clip_coef);
        let s2 = g.mul(clipped, adv)?;
        let surr = g.minimum(s1, s2)?;
        let surr = g.mean(surr);
        let pg_loss = g.neg(surr);

        let v = self.value.forward(&mut g, s, Params::Trainable)?;
        let ret = g.constant(column(&mb.returns)?);
        let err = g.sub(v.output, ret)?;
        let sq = g.square(err);
        let v_loss = g.mean(sq);
        let entropy = gaussian_entropy_var(&mut g, log_std);

        let weighted_v = g.scale(v_loss, self.cfg.vf_coef);
        let loss = g.add(pg_loss, weighted_v)?;
        let ent_term = g.scale(entropy, -self.cfg.ent_coef);
        let loss = g.add(loss, ent_term)?;

        let losses = PpoLosses { policy: g.value(pg_loss).item(), value: g.value(v_loss).item(), entropy: g.value(entropy).item() };
        let grads = g.backward(loss)?;
        let n_pol = f.params.len();
        let mut all = grads.collect(&f.params);
        all.extend(grads.collect(&v.params));
        clip_grad_norm(&mut all, self.cfg.max_grad_norm);
        let value_grads = all.split_off(n_pol);
        self.policy_opt.step(self.policy.params_mut(), &all)?;
        self.value_opt.step(self.value.params_mut(), &value_grads)?;
        self.counters.actor += 1;
        self.counters.critic += 1;
        Ok(losses)
    }

    /// K epochs of minibatch steps, stopping early once the policy has moved
    /// more than the KL limit from the behaviour policy.
    pub fn update_batch(&mut self, batch: &OnPolicyBatch) -> Result<()> {
        for _ in 0..self.cfg.update_epochs {
            for idx in minibatch_indices(batch.len(), self.cfg.num_minibatches, &mut self.rng) {
                self.minibatch_step(&batch.select(&idx)?)?;
            }
            let kl = approx_kl(&batch.old_log_probs, &log_probs(&self.policy, &batch.obs, &batch.actions)?);
            if kl > self.cfg.kl_limit {
                break;
            }
        }
        Ok(())
    }

    fn update_rollout(&mut self, rollout: &TrajectoryBatch) -> Result<()> {
        let batch = prepare_batch(&self.policy, &self.value, rollout, &self.cfg)?;
        self.update_batch(&batch)
    }
}

/// Gaussian action for the on-policy learners: a raw sample when exploring,
/// the clipped mean otherwise.
pub(crate) fn gaussian_act(policy: &Mlp<f64>, obs: &[f64], explore: bool, rng: &mut RngStream) -> Result<Vec<f64>> {
    let mean = policy.predict(&Tensor::row(obs))?.into_values();
    if !explore {
        return Ok(mean.iter().map(|m| m.clamp(-1.0, 1.0)).collect());
    }
    let log_std = policy.log_std().expect("gaussian head");
    Ok(mean.iter().zip(&log_std).map(|(m, l)| m + l.exp() * rng.standard_normal()).collect())
}

impl Learner for Ppo {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Ppo
    }

    fn act(&mut self, obs: &[f64], explore: bool) -> Result<Vec<f64>> {
        gaussian_act(&self.policy, obs, explore, &mut self.rng)
    }

    fn observe(&mut self, t: Transition, episode_over: bool) -> Result<()> {
        self.rollout.push(t, episode_over);
        if episode_over {
            let rollout = std::mem::take(&mut self.rollout);
            self.update_rollout(&rollout)?;
        }
        Ok(())
    }

    fn update_on(&mut self, transitions: &[Transition]) -> Result<()> {
        let mut rollout = TrajectoryBatch::new();
        let n = transitions.len();
        for (i, t) in transitions.iter().enumerate() {
            rollout.push(t.clone(), i + 1 == n);
        }
        self.update_rollout(&rollout)
    }

    fn counters(&self) -> UpdateCounters {
        self.counters
    }

    fn actor(&self) -> &Mlp<f64> {
        &self.policy
    }

    fn parameters(&self) -> Vec<&Tensor<f64>> {
        self.policy.params().iter().chain(self.value.params()).collect()
    }
}
