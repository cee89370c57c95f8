//! Numerical invariant checks shared by the integration tests and the
//! acceptance harness. Each returns a one-line summary or the first violation.

#![allow(dead_code)]

use climrl::autodiff::{quantile_huber, Graph};
use climrl::env::rce::{convective_adjustment, default_pressure_levels, weighted_mean_temperature, AtmosphericColumn, RcePhysicsParams};
use climrl::env::RceParams;
use climrl::nn::{Activation, Mlp, OutputHead, Params};
use climrl::rollout::{discounted_returns, gae, ReplayBuffer, Transition};
use climrl::tensor::Tensor;
use climrl::RngStream;

pub type Check = Result<String, String>;

fn mse_loss(net: &Mlp<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let out = net.predict(x).unwrap();
    out.values().iter().zip(y.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / out.len() as f64
}

/// Reverse-mode gradients of a squared-error loss against central finite
/// differences on `nets` random tanh networks; worst relative error of the
/// flattened gradient must stay below `tol`.
pub fn autodiff_matches_finite_differences(nets: usize, tol: f64) -> Check {
    let mut rng = RngStream::new(2024);
    let mut worst = 0.0f64;
    for n in 0..nets {
        let depth = 2 + rng.index(3);
        let sizes: Vec<usize> = (0..depth).map(|_| 1 + rng.index(6)).collect();
        let out = *sizes.last().unwrap();
        let head = if n % 2 == 0 {
            OutputHead::Linear
        } else {
            OutputHead::TanhScaled { low: vec![-2.0; out], high: vec![3.0; out] }
        };
        let mut net = Mlp::new(sizes.clone(), Activation::Tanh, head, 1.0, &mut rng).map_err(|e| e.to_string())?;
        let rows = 1 + rng.index(5);
        let x = Tensor::from_rows(rows, sizes[0], (0..rows * sizes[0]).map(|_| rng.uniform_range(-1.5, 1.5)).collect()).unwrap();
        let y = Tensor::from_rows(rows, out, (0..rows * out).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();

        let mut g = Graph::new();
        let xs = g.constant(x.clone());
        let f = net.forward(&mut g, xs, Params::Trainable).map_err(|e| e.to_string())?;
        let ys = g.constant(y.clone());
        let d = g.sub(f.output, ys).map_err(|e| e.to_string())?;
        let sq = g.square(d);
        let loss = g.mean(sq);
        let grads = g.backward(loss).map_err(|e| e.to_string())?.collect(&f.params);

        let h = 1e-5;
        let (mut diff, mut norm) = (0.0, 0.0);
        for k in 0..grads.len() {
            for i in 0..grads[k].len() {
                let orig = net.params()[k].values()[i];
                net.params_mut()[k].values_mut()[i] = orig + h;
                let up = mse_loss(&net, &x, &y);
                net.params_mut()[k].values_mut()[i] = orig - h;
                let down = mse_loss(&net, &x, &y);
                net.params_mut()[k].values_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads[k].values()[i];
                diff += (fd - an) * (fd - an);
                norm += an * an;
            }
        }
        let rel = diff.sqrt() / norm.sqrt().max(1e-12);
        worst = worst.max(rel);
        if rel > tol {
            return Err(format!("net {n} {sizes:?}: relative gradient error {rel:.2e} > {tol:e}"));
        }
    }
    Ok(format!("{nets} nets, worst relative error {worst:.2e}"))
}

fn random_column(rng: &mut RngStream, levels: &[f64], ps: f64) -> AtmosphericColumn {
    let temps = (0..levels.len()).map(|_| rng.uniform_range(150.0, 350.0)).collect();
    AtmosphericColumn::new(levels.to_vec(), ps, temps, rng.uniform_range(200.0, 330.0)).unwrap()
}

/// Convective adjustment preserves the weighted mean temperature of random
/// unstable columns (relative `cons_tol`) and is idempotent (absolute `idem_tol`, K).
pub fn convective_adjustment_invariants(trials: usize, cons_tol: f64, idem_tol: f64) -> Check {
    let mut rng = RngStream::new(77);
    let p = RcePhysicsParams::default();
    let params = RceParams::default();
    let levels = default_pressure_levels();
    let (mut worst_cons, mut worst_idem) = (0.0f64, 0.0f64);
    for n in 0..trials {
        let column = random_column(&mut rng, &levels, params.surface_pressure);
        let lapse = rng.uniform_range(5.5, 9.8);
        let once = convective_adjustment(&column, lapse, &p);
        let before = weighted_mean_temperature(&column, &p);
        let after = weighted_mean_temperature(&once, &p);
        let cons = ((after - before) / before).abs();
        let twice = convective_adjustment(&once, lapse, &p);
        let idem = once
            .temperatures()
            .iter()
            .chain([&once.surface_temperature()])
            .zip(twice.temperatures().iter().chain([&twice.surface_temperature()]))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_cons = worst_cons.max(cons);
        worst_idem = worst_idem.max(idem);
        if cons > cons_tol {
            return Err(format!("profile {n}: weighted mean moved by {cons:.2e} (relative)"));
        }
        if idem > idem_tol {
            return Err(format!("profile {n}: second adjustment moved a level by {idem:.2e} K"));
        }
    }
    Ok(format!("{trials} profiles, worst drift {worst_cons:.2e}, worst re-adjustment {worst_idem:.2e} K"))
}

/// `Â_t = Σ_k (γλ)^{k-t} δ_k`, summed forward until the first done.
pub fn gae_oracle(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut coef = 1.0;
            for k in t..n {
                let live = if dones[k] { 0.0 } else { 1.0 };
                sum += coef * (rewards[k] + gamma * live * values[k + 1] - values[k]);
                if dones[k] {
                    break;
                }
                coef *= gamma * lambda;
            }
            sum
        })
        .collect()
}

/// `G_t = Σ_{k≥t} γ^{k-t} r_k` by a direct double loop.
pub fn returns_oracle(rewards: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len()).map(|t| (t..rewards.len()).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum()).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// GAE against the forward-sum oracle on random 50-step trajectories with
/// episode ends, and the λ = 1 telescoping identity without ends.
pub fn gae_matches_oracles(trials: usize, tol: f64) -> Check {
    let mut rng = RngStream::new(50);
    let mut worst = 0.0f64;
    for n in 0..trials {
        let r: Vec<f64> = (0..50).map(|_| rng.normal(0.0, 1.0)).collect();
        let v: Vec<f64> = (0..51).map(|_| rng.normal(0.0, 2.0)).collect();
        let d: Vec<bool> = (0..50).map(|_| rng.uniform() < 0.08).collect();
        let (gamma, lambda) = (rng.uniform_range(0.8, 1.0), rng.uniform_range(0.0, 1.0));
        let (adv, ret) = gae(&r, &v, &d, gamma, lambda).map_err(|e| e.to_string())?;
        let err = max_abs_diff(&adv, &gae_oracle(&r, &v, &d, gamma, lambda));
        let ret_err = ret.iter().zip(&adv).zip(&v).map(|((r, a), v)| (r - a - v).abs()).fold(0.0, f64::max);

        let open = vec![false; 50];
        let (adv1, _) = gae(&r, &v, &open, gamma, 1.0).map_err(|e| e.to_string())?;
        let g = discounted_returns(&r, gamma).map_err(|e| e.to_string())?;
        let tele: Vec<f64> = (0..50).map(|t| g[t] + gamma.powi((50 - t) as i32) * v[50] - v[t]).collect();
        let tele_err = max_abs_diff(&adv1, &tele);

        let e = err.max(ret_err).max(tele_err);
        worst = worst.max(e);
        if e > tol {
            return Err(format!("trajectory {n}: GAE off by {err:.2e}, returns {ret_err:.2e}, λ=1 telescoping {tele_err:.2e}"));
        }
    }
    Ok(format!("{trials} trajectories, worst error {worst:.2e}"))
}

/// Discounted returns against the double-loop oracle.
pub fn returns_match_oracle(trials: usize, tol: f64) -> Check {
    let mut rng = RngStream::new(51);
    let mut worst = 0.0f64;
    for n in 0..trials {
        let r: Vec<f64> = (0..50).map(|_| rng.normal(0.0, 3.0)).collect();
        let gamma = if n == 0 { 0.97 } else { rng.uniform_range(0.5, 1.0) };
        let got = discounted_returns(&r, gamma).map_err(|e| e.to_string())?;
        let e = max_abs_diff(&got, &returns_oracle(&r, gamma));
        worst = worst.max(e);
        if e > tol {
            return Err(format!("trajectory {n}: returns off by {e:.2e}"));
        }
    }
    Ok(format!("{trials} trajectories, worst error {worst:.2e}"))
}

/// Quantile-Huber values evaluated by hand from the definition.
pub fn quantile_huber_hand_cases(tol: f64) -> Check {
    // (u, τ, κ, expected)
    let cases = [
        (0.0, 0.5, 1.0, 0.0),
        (1.0, 0.25, 1.0, 0.125),
        (-1.0, 0.25, 1.0, 0.375),
        (0.5, 0.9, 1.0, 0.9 * 0.125),
        (-0.5, 0.9, 1.0, 0.1 * 0.125),
        (3.0, 0.25, 1.0, 0.25 * 2.5),
        (-3.0, 0.25, 1.0, 0.75 * 2.5),
        (2.0, 0.5, 0.5, 0.5 * 0.875),
    ];
    for (u, tau, kappa, want) in cases {
        let got = quantile_huber::<f64>(u, tau, kappa);
        if (got - want).abs() > tol {
            return Err(format!("ρ(u={u}, τ={tau}, κ={kappa}) = {got}, expected {want}"));
        }
    }
    Ok(format!("{} cases", cases.len()))
}

/// χ² statistic of `draws` single-index samples from a 10-item buffer.
pub fn replay_chi_square(draws: usize, seed: u64) -> f64 {
    let mut buf = ReplayBuffer::new(10, 1, 1, RngStream::new(seed)).unwrap();
    for i in 0..10 {
        let t = Transition { obs: vec![i as f64], action: vec![0.0], reward: 0.0, next_obs: vec![0.0], done: false };
        buf.push(&t).unwrap();
    }
    let mut counts = [0usize; 10];
    for _ in 0..draws {
        counts[buf.sample_indices(1).unwrap()[0]] += 1;
    }
    let expect = draws as f64 / 10.0;
    counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum()
}

/// Upper 1% point of χ² with 9 degrees of freedom.
pub const CHI2_9_P01: f64 = 21.666;
