//! Post-training checks: policy structure on bias correction and fixed-parameter
//! baselines on RCE.

use crate::algos::policy::pearson;
use crate::algos::EpisodeTrace;
use crate::env::{EnvSpec, Environment};
use crate::error::{Error, Result};

/// Pearson correlation between state component `state` and the action
/// component `action` chosen in response, over the last `n` steps.
pub fn state_action_correlation(trace: &EpisodeTrace, n: usize, state: usize, action: usize) -> Option<f64> {
    let start = trace.observations.len().saturating_sub(n);
    let s: Vec<f64> = trace.observations[start..].iter().map(|o| o[state]).collect();
    let a: Vec<f64> = trace.actions[start..].iter().map(|x| x[action]).collect();
    pearson(&s, &a)
}

/// Mean per-step cost (negated reward) over the last `n` steps.
pub fn tail_mean_cost(rewards: &[f64], n: usize) -> f64 {
    let tail = &rewards[rewards.len().saturating_sub(n)..];
    -tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

/// One episode with a constant action.
pub fn fixed_action_rewards(env: &mut dyn Environment, action: &[f64]) -> Result<Vec<f64>> {
    env.reset(Some(0));
    let mut rewards = Vec::with_capacity(env.max_steps());
    loop {
        let r = env.step(action)?;
        rewards.push(r.reward);
        if r.done() {
            return Ok(rewards);
        }
    }
}

/// Best constant action on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBaseline {
    pub best_action: Vec<f64>,
    pub best_cost: f64,
    /// `(action, cost)` for every grid point.
    pub costs: Vec<(Vec<f64>, f64)>,
}

/// Scores every point of a `points`-per-axis grid spanning a two-dimensional
/// action box by the mean cost of its last `tail` steps.
pub fn grid_baseline(spec: &EnvSpec, points: usize, tail: usize) -> Result<GridBaseline> {
    if points < 2 {
        return Err(Error::invalid("a grid needs at least two points per axis"));
    }
    let mut env = spec.build()?;
    let space = env.action_space().clone();
    if space.dim() != 2 {
        return Err(Error::invalid("grid baselines need a two-dimensional action space"));
    }
    let axis = |d: usize, i: usize| space.low()[d] + (space.high()[d] - space.low()[d]) * i as f64 / (points - 1) as f64;
    let mut costs = Vec::with_capacity(points * points);
    for i in 0..points {
        for j in 0..points {
            let action = vec![axis(0, i), axis(1, j)];
            let cost = match fixed_action_rewards(env.as_mut(), &action) {
                Ok(rewards) => tail_mean_cost(&rewards, tail),
                Err(Error::NonFinite { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            costs.push((action, cost));
        }
    }
    let (best_action, best_cost) =
        costs.iter().min_by(|a, b| a.1.total_cmp(&b.1)).map(|(a, c)| (a.clone(), *c)).expect("non-empty grid");
    Ok(GridBaseline { best_action, best_cost, costs })
}
