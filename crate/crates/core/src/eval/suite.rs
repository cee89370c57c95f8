//! Multi-seed experiment runs.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use super::experiment::{ExperimentId, LayerSetting};
use super::record::{config_digest, RunRecord};
use crate::algos::{train, AlgoConfig, Algorithm, Control, EpisodeLog, RunStatus};
use crate::config::apply_algo_entries;
use crate::env::{EnvKind, EnvSpec};
use crate::error::{Error, Result};

/// Default hyperparameters of `algorithm` on `env`.
///
/// RCE rewards are squared temperature errors of order 10²–10⁴ K², so
/// they are scaled down before learning.
pub fn default_config(algorithm: Algorithm, env: EnvKind) -> AlgoConfig {
    let mut cfg = AlgoConfig::new(algorithm);
    if env == EnvKind::Rce {
        cfg.reward_scale = 1e-3;
    }
    cfg
}

/// Hyperparameters of one algorithm in one experiment.
///
/// `*-optim-L` requires tuned overrides; `*-homo-64L` applies them when
/// present and then forces 64 hidden units. The budget is the experiment's
/// unless `steps` overrides it.
pub fn experiment_config(
    exp: &ExperimentId,
    algorithm: Algorithm,
    tuned: Option<&BTreeMap<String, String>>,
    steps: Option<u64>,
) -> Result<AlgoConfig> {
    let mut cfg = default_config(algorithm, exp.env);
    match (exp.layers, tuned) {
        (_, Some(entries)) => apply_algo_entries(&mut cfg, entries)?,
        (LayerSetting::OptimL, None) => {
            return Err(Error::MissingTunedConfig { algorithm: algorithm.tag().into(), experiment: exp.to_string() })
        }
        (LayerSetting::Homo64L, None) => {}
    }
    if exp.layers == LayerSetting::Homo64L {
        cfg.actor_critic_layer_size = 64;
    }
    cfg.total_timesteps = steps.unwrap_or_else(|| exp.budget(None));
    cfg.validate()?;
    Ok(cfg)
}

pub fn env_spec(env: EnvKind, overrides: &[(String, f64)]) -> Result<EnvSpec> {
    let mut spec = EnvSpec::new(env);
    for (k, v) in overrides {
        spec.set_override(k, *v)?;
    }
    Ok(spec)
}

pub fn status_text(status: &RunStatus) -> String {
    match status {
        RunStatus::Completed => "completed".into(),
        RunStatus::Stopped { step } => format!("stopped at step {step}"),
        RunStatus::Diverged { step, reason } => format!("diverged at step {step}: {reason}"),
    }
}

/// Trains one seed and returns its record. A diverged run keeps the
/// episodes completed before the divergence.
pub fn run_single(
    experiment_id: &str,
    cfg: &AlgoConfig,
    env: &EnvSpec,
    seed: u64,
    on_episode: impl FnMut(&EpisodeLog) -> Control,
) -> Result<RunRecord> {
    let start = Instant::now();
    let mut instance = env.build()?;
    let outcome = train(instance.as_mut(), cfg, seed, on_episode)?;
    Ok(RunRecord {
        experiment_id: experiment_id.to_string(),
        algorithm: cfg.algorithm,
        seed,
        episodes: outcome.episodes,
        config_digest: config_digest(cfg, env),
        status: status_text(&outcome.status),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// How a suite is launched.
#[derive(Debug, Clone, Default)]
pub struct SuiteSettings {
    pub steps: Option<u64>,
    pub workers: usize,
    pub env_overrides: Vec<(String, f64)>,
    pub tuned: BTreeMap<Algorithm, BTreeMap<String, String>>,
}

/// One record per (algorithm, seed), ordered by algorithm then seed.
///
/// Up to `settings.workers` runs execute at once; `sink` sees each record
/// as soon as its run finishes (e.g. to write it to disk).
pub fn run_experiment_suite(
    exp: &ExperimentId,
    algorithms: &[Algorithm],
    seeds: &[u64],
    settings: &SuiteSettings,
    sink: impl Fn(&RunRecord) -> Result<()> + Sync,
) -> Result<Vec<RunRecord>> {
    if algorithms.is_empty() || seeds.is_empty() {
        return Err(Error::Empty("suite needs at least one algorithm and one seed".into()));
    }
    let spec = env_spec(exp.env, &settings.env_overrides)?;
    let configs = algorithms
        .iter()
        .map(|&a| experiment_config(exp, a, settings.tuned.get(&a), settings.steps))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(&AlgoConfig, u64)> = configs.iter().flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let id = exp.to_string();
    let run = |&(cfg, seed): &(&AlgoConfig, u64)| -> Result<RunRecord> {
        let record = run_single(&id, cfg, &spec, seed, |_| Control::Continue)?;
        sink(&record)?;
        Ok(record)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let results: Vec<Result<RunRecord>> = pool.install(|| tasks.par_iter().map(run).collect());
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homo_forces_64_units_and_optim_needs_tuning() {
        let exp: ExperimentId = "v0-homo-64L".parse().unwrap();
        let mut tuned = BTreeMap::new();
        tuned.insert("actor_critic_layer_size".to_string(), "16".to_string());
        tuned.insert("tau".to_string(), "0.02".to_string());
        let cfg = experiment_config(&exp, Algorithm::Ddpg, Some(&tuned), None).unwrap();
        assert_eq!((cfg.actor_critic_layer_size, cfg.tau, cfg.total_timesteps), (64, 0.02, 20_000));

        let exp: ExperimentId = "v0-optim-L-60k".parse().unwrap();
        let cfg = experiment_config(&exp, Algorithm::Ddpg, Some(&tuned), None).unwrap();
        assert_eq!((cfg.actor_critic_layer_size, cfg.total_timesteps), (16, 60_000));
        assert!(matches!(experiment_config(&exp, Algorithm::Ddpg, None, None), Err(Error::MissingTunedConfig { .. })));
    }

    #[test]
    fn suite_yields_one_record_per_pair_in_order() {
        let exp: ExperimentId = "v0-homo-64L".parse().unwrap();
        let mut settings = SuiteSettings { steps: Some(400), workers: 2, ..Default::default() };
        settings.tuned.insert(Algorithm::Ppo, BTreeMap::from([("update_epochs".to_string(), "1".to_string())]));
        let seen = std::sync::Mutex::new(0);
        let records = run_experiment_suite(&exp, &[Algorithm::Ppo, Algorithm::Reinforce], &[2, 1], &settings, |_| {
            *seen.lock().unwrap() += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(*seen.lock().unwrap(), 4);
        let keys: Vec<(Algorithm, u64)> = records.iter().map(|r| (r.algorithm, r.seed)).collect();
        assert_eq!(keys, vec![(Algorithm::Ppo, 2), (Algorithm::Ppo, 1), (Algorithm::Reinforce, 2), (Algorithm::Reinforce, 1)]);
        assert!(records.iter().all(|r| r.episodes.len() == 2 && r.status == "completed"));
    }
}
