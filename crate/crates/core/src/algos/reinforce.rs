//! Monte-Carlo policy gradient with a gaussian policy.

use super::policy::{gaussian_actor, gaussian_log_prob};
use super::ppo::gaussian_act;
use super::{AlgoConfig, Algorithm, Learner, UpdateCounters};
use crate::autodiff::Graph;
use crate::error::Result;
use crate::nn::{Mlp, Params};
use crate::optim::Optimizer;
use crate::rng::RngStream;
use crate::rollout::{discounted_returns, Transition, TrajectoryBatch};
use crate::tensor::Tensor;

pub struct Reinforce {
    pub policy: Mlp<f64>,
    opt: Optimizer<f64>,
    gamma: f64,
    episode: TrajectoryBatch,
    rng: RngStream,
    counters: UpdateCounters,
}

/// `-(1/T) Σ G_t ln π(a_t|s_t)` and its gradient with respect to the policy parameters.
pub fn reinforce_loss(policy: &Mlp<f64>, obs: &Tensor<f64>, actions: &Tensor<f64>, returns: &[f64]) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut g = Graph::new();
    let s = g.constant(obs.clone());
    let f = policy.forward(&mut g, s, Params::Trainable)?;
    let a = g.constant(actions.clone());
    let lp = gaussian_log_prob(&mut g, f.output, f.log_std.expect("gaussian head"), a)?;
    let ret = g.constant(Tensor::from_rows(returns.len(), 1, returns.to_vec())?);
    let weighted = g.mul(lp, ret)?;
    let m = g.mean(weighted);
    let loss = g.neg(m);
    let value = g.value(loss).item();
    let grads = g.backward(loss)?.collect(&f.params);
    Ok((value, grads))
}

impl Reinforce {
    pub fn new(cfg: &AlgoConfig, obs_dim: usize, act_dim: usize, mut rng: RngStream) -> Result<Self> {
        let policy = gaussian_actor(obs_dim, act_dim, cfg.actor_critic_layer_size, false, &mut rng)?;
        let opt = Optimizer::adam(cfg.learning_rate, policy.params())?;
        Ok(Self { policy, opt, gamma: cfg.gamma, episode: TrajectoryBatch::new(), rng, counters: UpdateCounters::default() })
    }

    /// One gradient step on a complete episode. Returns the loss.
    pub fn update_episode(&mut self, transitions: &[Transition]) -> Result<f64> {
        let rewards: Vec<f64> = transitions.iter().map(|t| t.reward).collect();
        let returns = discounted_returns(&rewards, self.gamma)?;
        let obs: Vec<&[f64]> = transitions.iter().map(|t| t.obs.as_slice()).collect();
        let act: Vec<&[f64]> = transitions.iter().map(|t| t.action.as_slice()).collect();
        let (loss, grads) = reinforce_loss(&self.policy, &Tensor::stack_rows(&obs)?, &Tensor::stack_rows(&act)?, &returns)?;
        self.opt.step(self.policy.params_mut(), &grads)?;
        self.counters.actor += 1;
        Ok(loss)
    }
}

impl Learner for Reinforce {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Reinforce
    }

    fn act(&mut self, obs: &[f64], explore: bool) -> Result<Vec<f64>> {
        gaussian_act(&self.policy, obs, explore, &mut self.rng)
    }

    fn observe(&mut self, t: Transition, episode_over: bool) -> Result<()> {
        self.episode.push(t, episode_over);
        if episode_over {
            let episode = std::mem::take(&mut self.episode);
            self.update_episode(&episode.transitions)?;
        }
        Ok(())
    }

    fn update_on(&mut self, transitions: &[Transition]) -> Result<()> {
        self.update_episode(transitions).map(drop)
    }

    fn counters(&self) -> UpdateCounters {
        self.counters
    }

    fn actor(&self) -> &Mlp<f64> {
        &self.policy
    }

    fn parameters(&self) -> Vec<&Tensor<f64>> {
        self.policy.params().iter().collect()
    }
}
