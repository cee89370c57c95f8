//! Experience storage and return/advantage estimators.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// One environment step `(s, a, r, s', d)`.
///
/// `done` is the termination flag used in bootstrapped targets; truncation at
/// the episode cap is tracked separately in [`TrajectoryBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// A batch of transitions as `[B, ·]` tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub obs: Tensor<f64>,
    pub actions: Tensor<f64>,
    /// `[B, 1]`
    pub rewards: Tensor<f64>,
    pub next_obs: Tensor<f64>,
    /// `[B, 1]`, 1.0 where the transition terminated.
    pub dones: Tensor<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.rewards.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::Empty("minibatch".into()));
        }
        let obs: Vec<&[f64]> = ts.iter().map(|t| t.obs.as_slice()).collect();
        let act: Vec<&[f64]> = ts.iter().map(|t| t.action.as_slice()).collect();
        let next: Vec<&[f64]> = ts.iter().map(|t| t.next_obs.as_slice()).collect();
        Ok(Self {
            obs: Tensor::stack_rows(&obs)?,
            actions: Tensor::stack_rows(&act)?,
            rewards: Tensor::from_rows(ts.len(), 1, ts.iter().map(|t| t.reward).collect())?,
            next_obs: Tensor::stack_rows(&next)?,
            dones: Tensor::from_rows(ts.len(), 1, ts.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect())?,
        })
    }
}

/// Fixed-capacity ring buffer of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    dones: Vec<f64>,
    len: usize,
    next: usize,
    rng: RngStream,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize, rng: RngStream) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            obs_dim,
            act_dim,
            obs: vec![0.0; capacity * obs_dim],
            actions: vec![0.0; capacity * act_dim],
            rewards: vec![0.0; capacity],
            next_obs: vec![0.0; capacity * obs_dim],
            dones: vec![0.0; capacity],
            len: 0,
            next: 0,
            rng,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores `t`, overwriting the oldest entry once full. The slot is
    /// written whole after validation, so no partial record is ever visible.
    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim || t.action.len() != self.act_dim {
            return Err(Error::shape("ReplayBuffer::push", "transition does not match buffer dimensions"));
        }
        let i = self.next;
        self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.obs);
        self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.next_obs);
        self.actions[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(&t.action);
        self.rewards[i] = t.reward;
        self.dones[i] = if t.done { 1.0 } else { 0.0 };
        self.next = (self.next + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// The stored transition at slot `i` (`0..len`).
    pub fn get(&self, i: usize) -> Option<Transition> {
        (i < self.len).then(|| Transition {
            obs: self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].to_vec(),
            action: self.actions[i * self.act_dim..(i + 1) * self.act_dim].to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].to_vec(),
            done: self.dones[i] != 0.0,
        })
    }

    /// Indices of a uniform minibatch without replacement.
    pub fn sample_indices(&mut self, batch_size: usize) -> Result<Vec<usize>> {
        if batch_size == 0 || batch_size > self.len {
            return Err(Error::invalid(format!("cannot sample {batch_size} transitions from {}", self.len)));
        }
        Ok(self.rng.sample_without_replacement(self.len, batch_size))
    }

    pub fn sample(&mut self, batch_size: usize) -> Result<Minibatch> {
        let idx = self.sample_indices(batch_size)?;
        let gather = |src: &[f64], w: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(idx.len() * w);
            for &i in &idx {
                out.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
            out
        };
        let b = idx.len();
        Ok(Minibatch {
            obs: Tensor::from_rows(b, self.obs_dim, gather(&self.obs, self.obs_dim))?,
            actions: Tensor::from_rows(b, self.act_dim, gather(&self.actions, self.act_dim))?,
            rewards: Tensor::from_rows(b, 1, gather(&self.rewards, 1))?,
            next_obs: Tensor::from_rows(b, self.obs_dim, gather(&self.next_obs, self.obs_dim))?,
            dones: Tensor::from_rows(b, 1, gather(&self.dones, 1))?,
        })
    }
}

/// Complete episodes collected by an on-policy learner.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryBatch {
    pub transitions: Vec<Transition>,
    /// Index one past the last transition of each finished episode.
    pub episode_ends: Vec<usize>,
    /// Per-step value estimates `V(s_t)` (filled by actor-critic learners).
    pub values: Vec<f64>,
    /// Log-probabilities of the stored actions under the behaviour policy.
    pub log_probs: Vec<f64>,
    pub returns: Option<Vec<f64>>,
    pub advantages: Option<Vec<f64>>,
}

impl TrajectoryBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, t: Transition, episode_over: bool) {
        self.transitions.push(t);
        if episode_over {
            self.episode_ends.push(self.transitions.len());
        }
    }

    /// Whether the last stored step closed an episode.
    pub fn at_episode_boundary(&self) -> bool {
        self.episode_ends.last() == Some(&self.transitions.len())
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    /// Slices `(start, end)` of each finished episode.
    pub fn episodes(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.episode_ends
            .iter()
            .map(|&end| {
                let span = (start, end);
                start = end;
                span
            })
            .collect()
    }
}

/// `G_t = r_t + γ G_{t+1}`, computed backwards.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    Ok(out)
}

/// Generalised advantage estimation.
///
/// `values` has one more entry than `rewards`: the bootstrap value of the
/// state after the last step. `dones[t]` cuts both the bootstrap and the
/// advantage recursion after step `t`. Returns `(advantages, returns)` with
/// `returns = advantages + values[..T]`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::shape(
            "gae",
            format!("{n} rewards need {} values and {n} done flags, got {} and {}", n + 1, values.len(), dones.len()),
        ));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * values[t + 1] - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts to zero mean and scales to unit (population) standard deviation.
pub fn normalize(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    xs.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}
