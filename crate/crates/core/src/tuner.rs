//! Random-search hyperparameter tuning with median pruning.
//!
//! Each trial samples the algorithm's tunables, trains on the tuning seed
//! and reports an interim score at every 20% of its budget: the mean
//! episodic return of the episodes that ended in the last 10% of steps so
//! far (or the latest episode if none did). A trial whose interim score is
//! strictly below the median of the scores other trials reported at the
//! same checkpoint is stopped. The final score is the interim score at
//! 100%; the best trial has the highest final score.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::algos::{train, AlgoConfig, Algorithm, Control, EpisodeLog, RunStatus};
use crate::config::ConfigFile;
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Training seed of every trial.
pub const TUNING_SEED: u64 = 1;
/// Default number of trials per study.
pub const DEFAULT_TRIALS: usize = 32;
/// Checkpoints per trial (every 20% of the budget).
pub const CHECKPOINTS: usize = 5;

const LAYER_SIZES: [f64; 5] = [16.0, 32.0, 64.0, 128.0, 256.0];
const BATCH_SIZES: [f64; 3] = [64.0, 128.0, 256.0];

/// Sampling distribution of one hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamRange {
    LogUniform(f64, f64),
    Uniform(f64, f64),
    /// Inclusive integer range.
    Int(i64, i64),
    Categorical(Vec<f64>),
}

impl ParamRange {
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            ParamRange::LogUniform(lo, hi) => rng.uniform_range(lo.ln(), hi.ln()).exp(),
            ParamRange::Uniform(lo, hi) => rng.uniform_range(*lo, *hi),
            ParamRange::Int(lo, hi) => rng.int_range(*lo, *hi) as f64,
            ParamRange::Categorical(xs) => xs[rng.index(xs.len())],
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        match self {
            ParamRange::LogUniform(lo, hi) | ParamRange::Uniform(lo, hi) => (*lo..=*hi).contains(&v),
            ParamRange::Int(lo, hi) => v.fract() == 0.0 && (*lo as f64..=*hi as f64).contains(&v),
            ParamRange::Categorical(xs) => xs.contains(&v),
        }
    }
}

/// The tunable hyperparameters of one algorithm and their ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub algorithm: Algorithm,
    pub params: Vec<(&'static str, ParamRange)>,
}

fn range_for(name: &str) -> ParamRange {
    use ParamRange::*;
    match name {
        "learning_rate" | "policy_lr" | "q_lr" | "actor_adam_lr" | "critic_adam_lr" | "alpha_adam_lr" => LogUniform(1e-5, 1e-2),
        "tau" => Uniform(0.001, 0.05),
        "batch_size" => Categorical(BATCH_SIZES.to_vec()),
        "actor_critic_layer_size" => Categorical(LAYER_SIZES.to_vec()),
        "exploration_noise" => Uniform(0.05, 0.5),
        "policy_noise" => Uniform(0.1, 0.5),
        "noise_clip" => Uniform(0.1, 1.0),
        "policy_frequency" | "target_network_frequency" => Int(1, 4),
        "num_minibatches" => Categorical(vec![1.0, 2.0, 4.0, 8.0]),
        "update_epochs" => Int(1, 10),
        "clip_coef" => Uniform(0.1, 0.4),
        "max_grad_norm" => Uniform(0.3, 5.0),
        "alpha" => Uniform(0.01, 0.5),
        "n_quantiles" => Int(5, 50),
        "n_critics" => Int(2, 5),
        other => unreachable!("no search range for `{other}`"),
    }
}

impl SearchSpace {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        Self { algorithm, params: algorithm.tunables().iter().map(|&n| (n, range_for(n))).collect() }
    }

    /// Draws every tunable; the map holds exactly the sampled parameters.
    pub fn sample(&self, rng: &mut RngStream) -> BTreeMap<String, f64> {
        self.params.iter().map(|(n, r)| (n.to_string(), r.sample(rng))).collect()
    }
}

/// Applies sampled values over `base`.
pub fn sample_config(space: &SearchSpace, base: &AlgoConfig, rng: &mut RngStream) -> Result<(AlgoConfig, BTreeMap<String, f64>)> {
    let sampled = space.sample(rng);
    let mut cfg = base.clone();
    for (k, v) in &sampled {
        cfg.set(k, *v)?;
    }
    cfg.validate()?;
    Ok((cfg, sampled))
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStatus {
    Complete,
    /// Stopped at the given checkpoint (1-based).
    Pruned { checkpoint: usize },
    Failed(String),
}

impl fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrialStatus::Complete => f.write_str("complete"),
            TrialStatus::Pruned { checkpoint } => write!(f, "pruned at checkpoint {checkpoint}"),
            TrialStatus::Failed(e) => write!(f, "failed: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: usize,
    pub params: BTreeMap<String, f64>,
    pub config: AlgoConfig,
    /// Interim scores, one per checkpoint reached.
    pub checkpoints: Vec<f64>,
    pub status: TrialStatus,
    pub score: Option<f64>,
    /// Environment steps consumed.
    pub steps: u64,
}

/// Runs one trial, passing every finished episode to `report`; training
/// stops as soon as `report` returns [`Control::Stop`].
pub trait TrialRunner: Sync {
    fn run(&self, cfg: &AlgoConfig, report: &mut dyn FnMut(&EpisodeLog) -> Control) -> Result<()>;
}

/// Trains on an environment with the tuning seed.
pub struct EnvTrialRunner {
    pub env: EnvSpec,
}

impl TrialRunner for EnvTrialRunner {
    fn run(&self, cfg: &AlgoConfig, report: &mut dyn FnMut(&EpisodeLog) -> Control) -> Result<()> {
        let mut env = self.env.build()?;
        match train(env.as_mut(), cfg, TUNING_SEED, report)?.status {
            RunStatus::Diverged { step, reason } => Err(Error::Diverged { step, reason }),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    pub n_trials: usize,
    pub workers: usize,
    /// Seed of the configuration sampler.
    pub sampler_seed: u64,
    pub prune: bool,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self { n_trials: DEFAULT_TRIALS, workers: 1, sampler_seed: TUNING_SEED, prune: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub algorithm: Algorithm,
    pub trials: Vec<Trial>,
    /// Index into `trials`.
    pub best: usize,
}

impl Study {
    pub fn best_trial(&self) -> &Trial {
        &self.trials[self.best]
    }

    pub fn total_steps(&self) -> u64 {
        self.trials.iter().map(|t| t.steps).sum()
    }

    /// `[<algorithm>]` section with the best trial's sampled values.
    pub fn write_fragment(&self, file: &mut ConfigFile) {
        let entries = self.best_trial().params.iter().map(|(k, v)| (k.clone(), v.to_string())).collect();
        file.replace_section(self.algorithm.tag(), entries);
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Interim score tracker of one trial.
struct Progress {
    budget: u64,
    episodes: Vec<EpisodeLog>,
    next: usize,
}

impl Progress {
    fn checkpoint_step(&self, c: usize) -> u64 {
        (self.budget * c as u64).div_ceil(CHECKPOINTS as u64)
    }

    /// Mean return over episodes ending in `(step - budget/10, step]`, else the latest return.
    fn score_at(&self, step: u64) -> Option<f64> {
        let window = self.budget.div_ceil(10);
        let lo = step.saturating_sub(window);
        let recent: Vec<f64> =
            self.episodes.iter().filter(|e| e.global_step > lo && e.global_step <= step).map(|e| e.episodic_return).collect();
        if recent.is_empty() {
            self.episodes.iter().rev().find(|e| e.global_step <= step).map(|e| e.episodic_return)
        } else {
            Some(recent.iter().sum::<f64>() / recent.len() as f64)
        }
    }
}

/// Runs `settings.n_trials` random-search trials of `base.algorithm`.
///
/// Configurations are drawn up front from the sampler seed, so the set of
/// trials does not depend on the worker count; with one worker the whole
/// study is deterministic.
pub fn run_study(base: &AlgoConfig, settings: &StudySettings, runner: &dyn TrialRunner) -> Result<Study> {
    if settings.n_trials == 0 {
        return Err(Error::invalid("a study needs at least one trial"));
    }
    let space = SearchSpace::for_algorithm(base.algorithm);
    let mut rng = RngStream::new(settings.sampler_seed);
    let drawn = (0..settings.n_trials).map(|_| sample_config(&space, base, &mut rng)).collect::<Result<Vec<_>>>()?;
    let budget = base.total_timesteps;
    // reported[c] = interim scores seen so far at checkpoint c
    let reported: Mutex<Vec<Vec<f64>>> = Mutex::new(vec![Vec::new(); CHECKPOINTS]);

    let run_trial = |(id, (cfg, params)): (usize, &(AlgoConfig, BTreeMap<String, f64>))| -> Trial {
        let mut progress = Progress { budget, episodes: Vec::new(), next: 1 };
        let mut checkpoints = Vec::new();
        let mut pruned_at = None;
        let mut report = |e: &EpisodeLog| -> Control {
            progress.episodes.push(*e);
            while progress.next <= CHECKPOINTS && e.global_step >= progress.checkpoint_step(progress.next) {
                let c = progress.next;
                progress.next += 1;
                let Some(score) = progress.score_at(progress.checkpoint_step(c)) else { continue };
                checkpoints.push(score);
                let mut seen = reported.lock().expect("checkpoint lock");
                let others = &mut seen[c - 1];
                let prune = settings.prune && c < CHECKPOINTS && !others.is_empty() && score < median(others);
                others.push(score);
                if prune {
                    pruned_at = Some(c);
                    return Control::Stop;
                }
            }
            Control::Continue
        };
        let result = runner.run(cfg, &mut report);
        let steps = progress.episodes.last().map_or(0, |e| e.global_step);
        let (status, score) = match (result, pruned_at) {
            (Err(e), _) => (TrialStatus::Failed(e.to_string()), None),
            (Ok(()), Some(c)) => (TrialStatus::Pruned { checkpoint: c }, None),
            (Ok(()), None) => (TrialStatus::Complete, progress.score_at(budget)),
        };
        Trial { id, params: params.clone(), config: cfg.clone(), checkpoints, status, score, steps }
    };

    let trials: Vec<Trial> = if settings.workers <= 1 {
        drawn.iter().enumerate().map(run_trial).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
        pool.install(|| drawn.par_iter().enumerate().map(run_trial).collect())
    };
    let best = trials
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.score.map(|s| (i, s)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Empty("no trial completed".into()))?;
    Ok(Study { algorithm: base.algorithm, trials, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Episodes of 100 steps whose return is `f(trial learning rate, step)`.
    struct Synthetic<F: Fn(f64, u64) -> f64 + Sync>(F);

    impl<F: Fn(f64, u64) -> f64 + Sync> TrialRunner for Synthetic<F> {
        fn run(&self, cfg: &AlgoConfig, report: &mut dyn FnMut(&EpisodeLog) -> Control) -> Result<()> {
            let mut step = 0;
            while step < cfg.total_timesteps {
                step += 100;
                if cfg.learning_rate < 0.0 {
                    return Err(Error::invalid("boom"));
                }
                if report(&EpisodeLog { global_step: step, episodic_return: (self.0)(cfg.learning_rate, step) }) == Control::Stop {
                    break;
                }
            }
            Ok(())
        }
    }

    fn base(alg: Algorithm) -> AlgoConfig {
        let mut c = AlgoConfig::new(alg);
        c.total_timesteps = 1_000;
        c
    }

    #[test]
    fn spaces_match_tunable_counts() {
        let counts: Vec<usize> = Algorithm::ALL.iter().map(|&a| SearchSpace::for_algorithm(a).params.len()).collect();
        assert_eq!(counts, vec![2, 4, 7, 8, 6, 6, 9, 10]);
        let mut rng = RngStream::new(9);
        for alg in Algorithm::ALL {
            let space = SearchSpace::for_algorithm(alg);
            for _ in 0..50 {
                let (cfg, sampled) = sample_config(&space, &AlgoConfig::new(alg), &mut rng).unwrap();
                assert_eq!(sampled.len(), alg.tunables().len());
                for (name, range) in &space.params {
                    assert!(range.contains(cfg.get(name).unwrap()), "{alg} {name}");
                }
            }
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let space = SearchSpace::for_algorithm(Algorithm::Tqc);
        let a = space.sample(&mut RngStream::new(4));
        assert_eq!(a, space.sample(&mut RngStream::new(4)));
        assert_ne!(a, space.sample(&mut RngStream::new(5)));
    }

    #[test]
    fn single_trial_is_best_and_unpruned() {
        let s = StudySettings { n_trials: 1, ..Default::default() };
        let study = run_study(&base(Algorithm::Ddpg), &s, &Synthetic(|_, t| -(t as f64))).unwrap();
        assert_eq!(study.best, 0);
        assert_eq!(study.trials[0].status, TrialStatus::Complete);
        assert_eq!(study.trials[0].checkpoints.len(), CHECKPOINTS);
        assert_eq!(study.total_steps(), 1_000);
    }

    #[test]
    fn dominated_trial_is_pruned_early() {
        // score rises with the learning rate at every step
        let runner = Synthetic(|lr, t| lr.ln() * 1000.0 - (1000 - t) as f64);
        let b = base(Algorithm::Reinforce);
        let space = SearchSpace::for_algorithm(Algorithm::Reinforce);
        // a sampler seed whose first draw is the better trial, so the dominated one runs second
        let seed = (1..)
            .find(|&seed| {
                let mut rng = RngStream::new(seed);
                let first = space.sample(&mut rng)["learning_rate"];
                first > space.sample(&mut rng)["learning_rate"]
            })
            .unwrap();
        let s = StudySettings { n_trials: 2, sampler_seed: seed, ..Default::default() };
        let study = run_study(&b, &s, &runner).unwrap();
        assert_eq!(study.trials[1].status, TrialStatus::Pruned { checkpoint: 1 });
        assert_eq!(study.best, 0);
        assert!(study.total_steps() < 2 * b.total_timesteps);
    }

    #[test]
    fn incumbent_is_never_pruned() {
        let runner = Synthetic(|lr, t| lr * t as f64);
        let s = StudySettings { n_trials: 12, ..Default::default() };
        let study = run_study(&base(Algorithm::Dpg), &s, &runner).unwrap();
        let best_lr = study.trials.iter().map(|t| t.config.learning_rate).fold(f64::MIN, f64::max);
        let top = study.trials.iter().find(|t| t.config.learning_rate == best_lr).unwrap();
        assert_eq!(top.status, TrialStatus::Complete);
        assert_eq!(study.best_trial().id, top.id);
        assert!(study.trials.iter().any(|t| matches!(t.status, TrialStatus::Pruned { .. })));
    }

    #[test]
    fn deterministic_with_one_worker_and_same_trials_in_parallel() {
        let runner = Synthetic(|lr, t| (lr * 1e4).sin() * t as f64);
        let s = StudySettings { n_trials: 6, ..Default::default() };
        let a = run_study(&base(Algorithm::Ppo), &s, &runner).unwrap();
        assert_eq!(a, run_study(&base(Algorithm::Ppo), &s, &runner).unwrap());
        let par = run_study(&base(Algorithm::Ppo), &StudySettings { workers: 3, prune: false, ..s.clone() }, &runner).unwrap();
        let cfgs = |st: &Study| st.trials.iter().map(|t| t.params.clone()).collect::<Vec<_>>();
        assert_eq!(cfgs(&a), cfgs(&par));
    }

    #[test]
    fn failed_trials_do_not_abort_the_study() {
        struct FailFirst;
        impl TrialRunner for FailFirst {
            fn run(&self, cfg: &AlgoConfig, report: &mut dyn FnMut(&EpisodeLog) -> Control) -> Result<()> {
                if cfg.learning_rate > 1e-3 {
                    return Err(Error::invalid("crashed"));
                }
                report(&EpisodeLog { global_step: cfg.total_timesteps, episodic_return: -1.0 });
                Ok(())
            }
        }
        let s = StudySettings { n_trials: 8, ..Default::default() };
        let study = run_study(&base(Algorithm::Reinforce), &s, &FailFirst).unwrap();
        assert!(study.trials.iter().any(|t| matches!(t.status, TrialStatus::Failed(_))));
        assert_eq!(study.best_trial().status, TrialStatus::Complete);
    }

    #[test]
    fn zero_trials_or_no_completion_is_an_error() {
        struct AlwaysFail;
        impl TrialRunner for AlwaysFail {
            fn run(&self, _: &AlgoConfig, _: &mut dyn FnMut(&EpisodeLog) -> Control) -> Result<()> {
                Err(Error::invalid("no"))
            }
        }
        let b = base(Algorithm::Sac);
        assert!(run_study(&b, &StudySettings { n_trials: 0, ..Default::default() }, &AlwaysFail).is_err());
        assert!(matches!(run_study(&b, &StudySettings { n_trials: 2, ..Default::default() }, &AlwaysFail), Err(Error::Empty(_))));
    }

    #[test]
    fn fragment_round_trips_through_config_file() {
        let s = StudySettings { n_trials: 3, ..Default::default() };
        let study = run_study(&base(Algorithm::Td3), &s, &Synthetic(|lr, _| lr)).unwrap();
        let mut file = ConfigFile::default();
        study.write_fragment(&mut file);
        let parsed = ConfigFile::parse(&file.to_text(), "fragment").unwrap();
        let cfg = parsed.algo_config(&AlgoConfig::new(Algorithm::Td3)).unwrap().unwrap();
        for (k, v) in &study.best_trial().params {
            assert_eq!(cfg.get(k).unwrap(), *v);
        }
    }
}
