//! TRPO: natural-gradient policy steps inside a KL trust region.
//!
//! The Fisher-vector product is the directional derivative of the KL
//! gradient, taken by central differences around the current parameters.

use super::policy::{conjugate_gradient, gaussian_actor, gaussian_kl, gaussian_log_prob, mean_gaussian_kl, value_network};
use super::ppo::{column, gaussian_act, minibatch_indices, prepare_batch, OnPolicyBatch};
use super::{AlgoConfig, Algorithm, Learner, UpdateCounters};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::nn::{Mlp, Params};
use crate::optim::{clip_grad_norm, Optimizer};
use crate::rng::RngStream;
use crate::rollout::{Transition, TrajectoryBatch};
use crate::tensor::{flatten, unflatten_into, Tensor};

/// Relative step of the finite-difference Fisher-vector product.
const FD_EPS: f64 = 1e-5;

/// What happened to the policy in one trust-region step.
#[derive(Debug, Clone, PartialEq)]
pub enum TrustRegionStep {
    /// Accepted after `halvings` step-size halvings.
    Accepted { halvings: usize, kl: f64, improvement: f64 },
    /// No candidate improved the surrogate within the KL limit.
    LineSearchFailed,
    /// The conjugate-gradient solve broke down; the policy is unchanged.
    SolverFailed(String),
}

pub struct Trpo {
    pub policy: Mlp<f64>,
    pub value: Mlp<f64>,
    value_opt: Optimizer<f64>,
    cfg: AlgoConfig,
    rollout: TrajectoryBatch,
    rng: RngStream,
    counters: UpdateCounters,
    pub last_step: Option<TrustRegionStep>,
}

/// Surrogate `mean(exp(ln π - ln π_old) Â)` and, optionally, its gradient.
pub fn surrogate(policy: &Mlp<f64>, mb: &OnPolicyBatch, with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let mut g = Graph::new();
    let s = g.constant(mb.obs.clone());
    let mode = if with_grad { Params::Trainable } else { Params::Frozen };
    let f = policy.forward(&mut g, s, mode)?;
    let a = g.constant(mb.actions.clone());
    let lp = gaussian_log_prob(&mut g, f.output, f.log_std.expect("gaussian head"), a)?;
    let old = g.constant(column(&mb.old_log_probs)?);
    let lr = g.sub(lp, old)?;
    let ratio = g.exp(lr);
    let adv = g.constant(column(&mb.advantages)?);
    let w = g.mul(ratio, adv)?;
    let loss = g.mean(w);
    let value = g.value(loss).item();
    if !with_grad {
        return Ok((value, None));
    }
    let grads = g.backward(loss)?.collect(&f.params);
    Ok((value, Some(flatten(&grads))))
}

/// Gradient of `mean KL(anchor ‖ π_θ)` at the policy's current parameters.
fn kl_gradient(policy: &Mlp<f64>, obs: &Tensor<f64>, anchor_mean: &Tensor<f64>, anchor_log_std: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let s = g.constant(obs.clone());
    let f = policy.forward(&mut g, s, Params::Trainable)?;
    let kl = mean_gaussian_kl(&mut g, anchor_mean, anchor_log_std, f.output, f.log_std.expect("gaussian head"))?;
    Ok(flatten(&g.backward(kl)?.collect(&f.params)))
}

/// Mean `KL(behaviour ‖ π)` over the batch rows.
pub fn mean_kl_from_behaviour(policy: &Mlp<f64>, mb: &OnPolicyBatch) -> Result<f64> {
    let mean = policy.predict(&mb.obs)?;
    let log_std = policy.log_std().expect("gaussian head");
    let n = mb.len();
    Ok((0..n).map(|i| gaussian_kl(mb.old_mean.row_slice(i), &mb.old_log_std, mean.row_slice(i), &log_std)).sum::<f64>() / n.max(1) as f64)
}

impl Trpo {
    pub fn new(cfg: &AlgoConfig, obs_dim: usize, act_dim: usize, mut rng: RngStream) -> Result<Self> {
        let h = cfg.actor_critic_layer_size;
        let policy = gaussian_actor(obs_dim, act_dim, h, false, &mut rng)?;
        let value = value_network(obs_dim, h, &mut rng)?;
        Ok(Self {
            value_opt: Optimizer::adam(cfg.learning_rate, value.params())?,
            policy,
            value,
            cfg: cfg.clone(),
            rollout: TrajectoryBatch::new(),
            rng,
            counters: UpdateCounters::default(),
            last_step: None,
        })
    }

    /// Damped Fisher-vector product at the current parameters.
    fn fisher_product(&mut self, mb: &OnPolicyBatch, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let anchor_mean = self.policy.predict(&mb.obs)?;
        let anchor_log_std = self.policy.log_std().expect("gaussian head");
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        let eps = FD_EPS * (1.0 + theta.iter().map(|x| x * x).sum::<f64>().sqrt()) / norm;
        let mut grad_at = |sign: f64| -> Result<Vec<f64>> {
            let shifted: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t + sign * eps * d).collect();
            unflatten_into(&shifted, self.policy.params_mut())?;
            kl_gradient(&self.policy, &mb.obs, &anchor_mean, &anchor_log_std)
        };
        let plus = grad_at(1.0);
        let minus = grad_at(-1.0);
        unflatten_into(theta, self.policy.params_mut())?;
        let (plus, minus) = (plus?, minus?);
        Ok(plus.iter().zip(&minus).zip(v).map(|((p, m), d)| (p - m) / (2.0 * eps) + self.cfg.cg_damping * d).collect())
    }

    /// Natural-gradient step with halving line search on one minibatch.
    pub fn policy_step(&mut self, mb: &OnPolicyBatch) -> Result<TrustRegionStep> {
        let theta = flatten(self.policy.params());
        let (base, grad) = surrogate(&self.policy, mb, true)?;
        let grad = grad.expect("gradient requested");
        let gnorm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !gnorm.is_finite() {
            return Err(Error::NonFinite { context: "TRPO surrogate gradient".into() });
        }
        if gnorm == 0.0 {
            return Ok(TrustRegionStep::LineSearchFailed);
        }
        let iters = self.cfg.cg_iters;
        let solved = conjugate_gradient(|v| self.fisher_product(mb, &theta, v), &grad, iters, 1e-10);
        let x = match solved {
            Ok(sol) if sol.x.iter().all(|v| v.is_finite()) && sol.residual_norm < gnorm => sol.x,
            Ok(sol) => return Ok(self.skip(format!("residual {} not below gradient norm {gnorm}", sol.residual_norm))),
            Err(e) => return Ok(self.skip(e.to_string())),
        };
        let hx = self.fisher_product(mb, &theta, &x)?;
        let shs: f64 = x.iter().zip(&hx).map(|(a, b)| a * b).sum();
        if !(shs > 0.0 && shs.is_finite()) {
            return Ok(self.skip(format!("non-positive curvature {shs}")));
        }
        let step = (2.0 * self.cfg.kl_limit / shs).sqrt();
        let mut frac = 1.0;
        for halvings in 0..self.cfg.line_search_steps.max(1) {
            let candidate: Vec<f64> = theta.iter().zip(&x).map(|(t, d)| t + frac * step * d).collect();
            unflatten_into(&candidate, self.policy.params_mut())?;
            let (value, _) = surrogate(&self.policy, mb, false)?;
            let kl = mean_kl_from_behaviour(&self.policy, mb)?;
            if value.is_finite() && kl.is_finite() && value > base && kl <= self.cfg.kl_limit {
                self.counters.actor += 1;
                return Ok(TrustRegionStep::Accepted { halvings, kl, improvement: value - base });
            }
            frac *= 0.5;
        }
        unflatten_into(&theta, self.policy.params_mut())?;
        Ok(TrustRegionStep::LineSearchFailed)
    }

    fn skip(&mut self, reason: String) -> TrustRegionStep {
        self.counters.skipped += 1;
        TrustRegionStep::SolverFailed(reason)
    }

    /// Value-function regression step on a minibatch.
    pub fn value_step(&mut self, mb: &OnPolicyBatch) -> Result<f64> {
        let mut g = Graph::new();
        let s = g.constant(mb.obs.clone());
        let v = self.value.forward(&mut g, s, Params::Trainable)?;
        let ret = g.constant(column(&mb.returns)?);
        let err = g.sub(v.output, ret)?;
        let sq = g.square(err);
        let loss = g.mean(sq);
        let value = g.value(loss).item();
        let mut grads = g.backward(loss)?.collect(&v.params);
        clip_grad_norm(&mut grads, self.cfg.max_grad_norm);
        self.value_opt.step(self.value.params_mut(), &grads)?;
        self.counters.critic += 1;
        Ok(value)
    }

    pub fn update_batch(&mut self, batch: &OnPolicyBatch) -> Result<()> {
        for _ in 0..self.cfg.update_epochs {
            for idx in minibatch_indices(batch.len(), self.cfg.num_minibatches, &mut self.rng) {
                let mb = batch.select(&idx)?;
                self.value_step(&mb)?;
                let outcome = self.policy_step(&mb)?;
                self.last_step = Some(outcome);
            }
            if mean_kl_from_behaviour(&self.policy, batch)? > self.cfg.kl_limit {
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

impl Learner for Trpo {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Trpo
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
