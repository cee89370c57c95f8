//! Update-rule properties of the eight learners.

use climrl::algos::ddpg::Ddpg;
use climrl::algos::dpg::Dpg;
use climrl::algos::policy::{gaussian_actor, sample_squashed};
use climrl::algos::ppo::{clipped_surrogate, log_probs, OnPolicyBatch};
use climrl::algos::reinforce::{reinforce_loss, Reinforce};
use climrl::algos::sac::{EntropyCoefficient, Sac};
use climrl::algos::td3::Td3;
use climrl::algos::tqc::Tqc;
use climrl::algos::trpo::{mean_kl_from_behaviour, surrogate};
use climrl::algos::{build_learner, rollout_episode, Agent, AlgoConfig, Algorithm, Learner};
use climrl::autodiff::quantile_huber;
use climrl::env::{BiasCorrVersion, EnvKind, EnvSpec};
use climrl::nn::Mlp;
use climrl::rollout::{discounted_returns, Minibatch, Transition};
use climrl::tensor::Tensor;
use climrl::RngStream;

const OBS: usize = 3;
const ACT: usize = 2;

fn cfg(alg: Algorithm) -> AlgoConfig {
    let mut c = AlgoConfig::new(alg);
    c.actor_critic_layer_size = 16;
    c
}

fn transitions(n: usize, seed: u64, done: bool) -> Vec<Transition> {
    let mut rng = RngStream::new(seed);
    (0..n)
        .map(|_| Transition {
            obs: (0..OBS).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            action: (0..ACT).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            reward: rng.normal(0.0, 1.0),
            next_obs: (0..OBS).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            done,
        })
        .collect()
}

fn q_of(net: &Mlp<f64>, obs: &Tensor<f64>, act: &Tensor<f64>) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = (0..obs.rows()).map(|i| [obs.row_slice(i), act.row_slice(i)].concat()).collect();
    net.predict(&Tensor::stack_rows(&rows).unwrap()).unwrap().into_values()
}

fn perturb(params: &mut [Tensor<f64>], by: f64) {
    for p in params {
        for v in p.values_mut() {
            *v += by;
        }
    }
}

// ---- REINFORCE ----

#[test]
fn reinforce_bandit_mean_drifts_towards_rewarded_side() {
    let mut c = cfg(Algorithm::Reinforce);
    c.learning_rate = 1e-2;
    let mut agent = Reinforce::new(&c, 1, 1, RngStream::new(3)).unwrap();
    let obs = vec![0.0];
    let start = agent.act(&obs, false).unwrap()[0];
    for _ in 0..2_000 {
        let a = agent.act(&obs, true).unwrap();
        let reward = if a[0] > 0.0 { 1.0 } else { 0.0 };
        agent.update_episode(&[Transition { obs: obs.clone(), action: a, reward, next_obs: obs.clone(), done: true }]).unwrap();
    }
    let end = agent.act(&obs, false).unwrap()[0];
    assert!(end > 0.0 && end > start + 0.1, "mean action {start} -> {end}");
}

#[test]
fn zero_discount_returns_are_rewards() {
    let r = [0.5, -1.0, 2.0, 0.25];
    assert_eq!(discounted_returns(&r, 0.0).unwrap(), r.to_vec());
}

#[test]
fn reinforce_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(11);
    let mut policy = gaussian_actor(OBS, ACT, 8, false, &mut rng).unwrap();
    let ts = transitions(12, 5, false);
    let obs = Tensor::stack_rows(&ts.iter().map(|t| t.obs.clone()).collect::<Vec<_>>()).unwrap();
    let act = Tensor::stack_rows(&ts.iter().map(|t| t.action.clone()).collect::<Vec<_>>()).unwrap();
    let returns: Vec<f64> = ts.iter().map(|t| t.reward).collect();
    let (_, grads) = reinforce_loss(&policy, &obs, &act, &returns).unwrap();
    let h = 1e-6;
    for (k, g) in grads.iter().enumerate() {
        for i in (0..g.len()).step_by(3) {
            let orig = policy.params()[k].values()[i];
            policy.params_mut()[k].values_mut()[i] = orig + h;
            let up = reinforce_loss(&policy, &obs, &act, &returns).unwrap().0;
            policy.params_mut()[k].values_mut()[i] = orig - h;
            let down = reinforce_loss(&policy, &obs, &act, &returns).unwrap().0;
            policy.params_mut()[k].values_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = g.values()[i];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "param {k}[{i}]: fd {fd} vs {an}");
        }
    }
}

// ---- DPG ----

#[test]
fn dpg_terminal_target_is_the_reward() {
    let dpg = Dpg::new(&cfg(Algorithm::Dpg), OBS, ACT, RngStream::new(1)).unwrap();
    let ts = transitions(8, 2, true);
    let batch = Minibatch::from_transitions(&ts).unwrap();
    let y = dpg.targets(&batch).unwrap();
    for (t, y) in ts.iter().zip(y.values()) {
        assert_eq!(*y, t.reward);
    }
}

#[test]
fn dpg_actor_finds_the_maximum_of_a_frozen_critic() {
    let mut c = cfg(Algorithm::Dpg);
    c.learning_rate = 3e-3;
    let mut dpg = Dpg::new(&c, 1, 1, RngStream::new(4)).unwrap();
    let mut rng = RngStream::new(9);
    for _ in 0..2_000 {
        let obs = Tensor::from_rows(16, 1, (0..16).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        dpg.actor_update_against(&obs, |g, _s, a| {
            let target = g.constant(Tensor::filled(&[16, 1], 0.3));
            let d = g.sub(a, target)?;
            let sq = g.square(d);
            Ok(g.neg(sq))
        })
        .unwrap();
    }
    for x in [-0.9, 0.0, 0.7] {
        let a = dpg.act(&[x], false).unwrap()[0];
        assert!((a - 0.3).abs() < 0.02, "π({x}) = {a}");
    }
}

#[test]
fn noiseless_dpg_replays_identical_trajectories() {
    let mut c = cfg(Algorithm::Dpg);
    c.exploration_noise = 0.0;
    let spec = EnvSpec::new(EnvKind::BiasCorrection(BiasCorrVersion::V0));
    let mut env = spec.build().unwrap();
    let mut agent = Agent::new(&c, env.observation_space(), env.action_space(), RngStream::new(5)).unwrap();
    let a = rollout_episode(&mut agent, env.as_mut(), Some(1), true).unwrap();
    let b = rollout_episode(&mut agent, env.as_mut(), Some(1), true).unwrap();
    let greedy = rollout_episode(&mut agent, env.as_mut(), Some(1), false).unwrap();
    assert_eq!(a.actions, b.actions);
    assert_eq!(a.observations, greedy.observations);
    assert_eq!(a.rewards, greedy.rewards);
}

// ---- DDPG ----

#[test]
fn ddpg_unit_tau_copies_online_networks() {
    let mut c = cfg(Algorithm::Ddpg);
    c.tau = 1.0;
    let mut ddpg = Ddpg::new(&c, OBS, ACT, RngStream::new(2)).unwrap();
    let batch = Minibatch::from_transitions(&transitions(32, 3, false)).unwrap();
    for _ in 0..3 {
        ddpg.update(&batch, true).unwrap();
        assert_eq!(ddpg.actor_target.params(), ddpg.actor.params());
        assert_eq!(ddpg.critic_target.params(), ddpg.critic.params());
    }
}

#[test]
fn ddpg_targets_ignore_online_networks() {
    let mut ddpg = Ddpg::new(&cfg(Algorithm::Ddpg), OBS, ACT, RngStream::new(2)).unwrap();
    let batch = Minibatch::from_transitions(&transitions(16, 4, false)).unwrap();
    let before = ddpg.targets(&batch).unwrap();
    perturb(ddpg.actor.params_mut(), 0.5);
    perturb(ddpg.critic.params_mut(), -0.3);
    assert_eq!(ddpg.targets(&batch).unwrap(), before);
}

// ---- TD3 ----

#[test]
fn td3_smoothing_noise_respects_the_clip() {
    let mut c = cfg(Algorithm::Td3);
    c.policy_noise = 1.0;
    c.noise_clip = 0.5;
    let mut td3 = Td3::new(&c, OBS, ACT, RngStream::new(6)).unwrap();
    let noise = td3.smoothing_noise(10_000);
    assert!(noise.iter().all(|n| n.abs() <= 0.5));
    assert!(noise.iter().filter(|n| n.abs() == 0.5).count() > 1_000);
}

#[test]
fn td3_min_target_is_below_each_critic_target() {
    let mut td3 = Td3::new(&cfg(Algorithm::Td3), OBS, ACT, RngStream::new(7)).unwrap();
    perturb(td3.critic_targets[1].params_mut(), 0.05);
    let batch = Minibatch::from_transitions(&transitions(64, 8, false)).unwrap();
    let ([y1, y2], y) = td3.targets(&batch).unwrap();
    for i in 0..64 {
        let m = y.values()[i];
        assert!(m <= y1.values()[i] && m <= y2.values()[i]);
        assert!(m == y1.values()[i] || m == y2.values()[i]);
    }
}

#[test]
fn td3_delays_actor_updates() {
    let mut c = cfg(Algorithm::Td3);
    c.policy_frequency = 2;
    c.learning_starts = 10;
    c.batch_size = 8;
    let mut td3 = Td3::new(&c, OBS, ACT, RngStream::new(8)).unwrap();
    for t in transitions(301, 9, false) {
        td3.observe(t, false).unwrap();
    }
    let n = td3.counters();
    assert!(n.critic > 200);
    assert!((n.actor as i64 - n.critic as i64 / 2).abs() <= 1, "{n:?}");
    assert_eq!(n.target, n.actor);
}

// ---- TRPO / PPO ----

fn behaviour_batch(policy: &Mlp<f64>, ts: &[Transition]) -> OnPolicyBatch {
    let obs = Tensor::stack_rows(&ts.iter().map(|t| t.obs.clone()).collect::<Vec<_>>()).unwrap();
    let actions = Tensor::stack_rows(&ts.iter().map(|t| t.action.clone()).collect::<Vec<_>>()).unwrap();
    OnPolicyBatch {
        old_log_probs: log_probs(policy, &obs, &actions).unwrap(),
        old_mean: policy.predict(&obs).unwrap(),
        old_log_std: policy.log_std().unwrap(),
        advantages: ts.iter().map(|t| t.reward).collect(),
        returns: vec![0.0; ts.len()],
        obs,
        actions,
    }
}

#[test]
fn trpo_unchanged_policy_has_unit_ratio() {
    let policy = gaussian_actor(OBS, ACT, 16, false, &mut RngStream::new(10)).unwrap();
    let ts = transitions(40, 11, false);
    let mb = behaviour_batch(&policy, &ts);
    let mean_adv = mb.advantages.iter().sum::<f64>() / 40.0;
    let (surr, grad) = surrogate(&policy, &mb, true).unwrap();
    assert!((surr - mean_adv).abs() < 1e-12);
    assert!(grad.unwrap().iter().all(|g| g.is_finite()));
    assert_eq!(mean_kl_from_behaviour(&policy, &mb).unwrap(), 0.0);
}

#[test]
fn ppo_clip_algebra() {
    let adv = [0.5, -1.0, 2.0];
    assert!((clipped_surrogate(&[1.0; 3], &adv, 0.2) - 0.5).abs() < 1e-15);
    let eps = 0.2;
    assert!((clipped_surrogate(&[1.0 + 2.0 * eps], &[3.0], eps) - (1.0 + eps) * 3.0).abs() < 1e-15);
    // A negative advantage keeps the unclipped, more pessimistic term.
    assert!((clipped_surrogate(&[1.0 + 2.0 * eps], &[-3.0], eps) - (1.0 + 2.0 * eps) * -3.0).abs() < 1e-15);
}

// ---- SAC / TQC ----

#[test]
fn sac_without_entropy_uses_the_min_critic_target() {
    let mut c = cfg(Algorithm::Sac);
    c.alpha = 0.0;
    c.autotune_alpha = false;
    let mut sac = Sac::new(&c, OBS, ACT, RngStream::new(12)).unwrap();
    sac.alpha = EntropyCoefficient::fixed(0.0);
    perturb(sac.critic_targets[0].params_mut(), 0.02);
    let ts = transitions(32, 13, false);
    let batch = Minibatch::from_transitions(&ts).unwrap();
    let noise = Tensor::from_rows(32, ACT, (0..32 * ACT).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect()).unwrap();
    let y = sac.soft_target(&batch, &noise).unwrap();
    let (next_a, _) = sample_squashed(&sac.actor, &batch.next_obs, &noise).unwrap();
    let q1 = q_of(&sac.critic_targets[0], &batch.next_obs, &next_a);
    let q2 = q_of(&sac.critic_targets[1], &batch.next_obs, &next_a);
    for i in 0..32 {
        let expect = ts[i].reward + c.gamma * q1[i].min(q2[i]);
        assert!((y.values()[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn sac_actions_stay_in_the_cube() {
    let mut sac = Sac::new(&cfg(Algorithm::Sac), OBS, ACT, RngStream::new(14)).unwrap();
    for t in transitions(500, 15, false) {
        let a = sac.act(&t.obs, true).unwrap();
        assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
        sac.observe(Transition { action: a, ..t }, false).unwrap();
    }
}

#[test]
fn single_quantile_tqc_matches_the_sac_target() {
    let mut c = cfg(Algorithm::Tqc);
    c.n_critics = 1;
    c.n_quantiles = 1;
    c.top_quantiles_to_drop = 0;
    c.autotune_alpha = false;
    c.alpha = 0.3;
    let tqc = Tqc::new(&c, OBS, ACT, RngStream::new(16)).unwrap();
    let mut sc = cfg(Algorithm::Sac);
    sc.autotune_alpha = false;
    let mut sac = Sac::new(&sc, OBS, ACT, RngStream::new(17)).unwrap();
    sac.actor = tqc.actor.clone();
    sac.critic_targets = [tqc.critic_targets[0].clone(), tqc.critic_targets[0].clone()];
    sac.alpha = EntropyCoefficient::fixed(tqc.alpha.value());
    let batch = Minibatch::from_transitions(&transitions(24, 18, false)).unwrap();
    let noise = Tensor::from_rows(24, ACT, (0..24 * ACT).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let z = tqc.truncated_target(&batch, &noise).unwrap();
    let y = sac.soft_target(&batch, &noise).unwrap();
    assert_eq!(z.shape(), &[24, 1]);
    for (a, b) in z.values().iter().zip(y.values()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn quantile_huber_hand_cases() {
    assert_eq!(quantile_huber::<f64>(0.0, 0.3, 1.0), 0.0);
    assert!((quantile_huber::<f64>(1.0, 0.25, 1.0) - 0.125).abs() < 1e-12);
    assert!((quantile_huber::<f64>(-1.0, 0.25, 1.0) - 0.375).abs() < 1e-12);
    assert!((quantile_huber::<f64>(3.0, 0.25, 1.0) - 0.25 * 2.5).abs() < 1e-12);
}

// ---- shared ----

#[test]
fn exploration_noise_has_the_configured_std() {
    let mut c = cfg(Algorithm::Ddpg);
    c.exploration_noise = 0.1;
    c.learning_starts = 0;
    let mut ddpg = Ddpg::new(&c, OBS, ACT, RngStream::new(19)).unwrap();
    let obs = [0.1, -0.2, 0.3];
    let mean = ddpg.act(&obs, false).unwrap();
    let n = 100_000;
    let draws: Vec<f64> = (0..n).map(|_| ddpg.act(&obs, true).unwrap()[0] - mean[0]).collect();
    let m = draws.iter().sum::<f64>() / n as f64;
    let sd = (draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((sd / 0.1 - 1.0).abs() < 0.02, "sd {sd}");
}

#[test]
fn one_update_on_a_frozen_batch_is_deterministic() {
    for alg in Algorithm::ALL {
        let c = cfg(alg);
        let ts = transitions(32, 20, false);
        let run = || {
            let mut l = build_learner(&c, OBS, ACT, RngStream::new(21)).unwrap();
            l.update_on(&ts).unwrap();
            l.parameters().into_iter().cloned().collect::<Vec<_>>()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b, "{alg}");
        let fresh: Vec<Tensor<f64>> = build_learner(&c, OBS, ACT, RngStream::new(21)).unwrap().parameters().into_iter().cloned().collect();
        assert_ne!(a, fresh, "{alg} did not update");
    }
}
