//! Network builders and gaussian-policy algebra shared by the learners.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, OutputHead, Params};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// `0.5 ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Two hidden layers of width `hidden`.
pub fn layers(input: usize, hidden: usize, output: usize) -> Vec<usize> {
    vec![input, hidden, hidden, output]
}

/// Deterministic actor with outputs in `[-1, 1]`.
pub fn deterministic_actor(obs_dim: usize, act_dim: usize, hidden: usize, rng: &mut RngStream) -> Result<Mlp<f64>> {
    let head = OutputHead::TanhScaled { low: vec![-1.0; act_dim], high: vec![1.0; act_dim] };
    Mlp::new(layers(obs_dim, hidden, act_dim), Activation::Relu, head, 1.0, rng)
}

/// Gaussian actor; `squashed` policies pass samples through `tanh`.
pub fn gaussian_actor(obs_dim: usize, act_dim: usize, hidden: usize, squashed: bool, rng: &mut RngStream) -> Result<Mlp<f64>> {
    let activation = if squashed { Activation::Relu } else { Activation::Tanh };
    Mlp::new(layers(obs_dim, hidden, act_dim), activation, OutputHead::Gaussian { squashed }, 0.01, rng)
}

/// `Q(s, a)` network with `outputs` heads (1 for scalar critics, `N_q` for quantile critics).
pub fn q_network(obs_dim: usize, act_dim: usize, hidden: usize, outputs: usize, rng: &mut RngStream) -> Result<Mlp<f64>> {
    Mlp::new(layers(obs_dim + act_dim, hidden, outputs), Activation::Relu, OutputHead::Linear, 1.0, rng)
}

/// State-value network for the trust-region methods.
pub fn value_network(obs_dim: usize, hidden: usize, rng: &mut RngStream) -> Result<Mlp<f64>> {
    Mlp::new(layers(obs_dim, hidden, 1), Activation::Tanh, OutputHead::Linear, 1.0, rng)
}

/// `ln N(x; μ, σ)` summed over columns, `[B, d] -> [B, 1]`. `log_std` is a `[1, d]` row.
pub fn gaussian_log_prob(g: &mut Graph<f64>, mean: Var, log_std: Var, x: Var) -> Result<Var> {
    let diff = g.sub(x, mean)?;
    let neg = g.neg(log_std);
    let inv_std = g.exp(neg);
    let z = g.mul(diff, inv_std)?;
    let z2 = g.square(z);
    let quad = g.scale(z2, -0.5);
    let lp = g.sub(quad, log_std)?;
    let lp = g.add_scalar(lp, -HALF_LN_2PI);
    Ok(g.sum_cols(lp))
}

/// Differentiable entropy `Σ (½ + ½ ln 2π + ln σ)` of a diagonal gaussian, `[1, 1]`.
pub fn gaussian_entropy_var(g: &mut Graph<f64>, log_std: Var) -> Var {
    let s = g.sum(log_std);
    let d = g.value(log_std).len() as f64;
    g.add_scalar(s, d * (0.5 + HALF_LN_2PI))
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|l| 0.5 + HALF_LN_2PI + l).sum()
}

/// `KL(N(μ₀, σ₀) ‖ N(μ₁, σ₁))` for diagonal gaussians.
pub fn gaussian_kl(mu0: &[f64], log_std0: &[f64], mu1: &[f64], log_std1: &[f64]) -> f64 {
    mu0.iter()
        .zip(log_std0)
        .zip(mu1.iter().zip(log_std1))
        .map(|((m0, l0), (m1, l1))| {
            let (v0, v1) = ((2.0 * l0).exp(), (2.0 * l1).exp());
            l1 - l0 + (v0 + (m0 - m1).powi(2)) / (2.0 * v1) - 0.5
        })
        .sum()
}

/// Mean over rows of `KL(old ‖ new)`, where the old mean `[B, d]` and log-std
/// `[1, d]` are constants and the new ones live on the graph.
pub fn mean_gaussian_kl(g: &mut Graph<f64>, old_mean: &Tensor<f64>, old_log_std: &[f64], mean: Var, log_std: Var) -> Result<Var> {
    let mu0 = g.constant(old_mean.clone());
    let var0 = g.constant(Tensor::row(&old_log_std.iter().map(|l| (2.0 * l).exp()).collect::<Vec<_>>()));
    let l0: f64 = old_log_std.iter().sum();
    let diff = g.sub(mu0, mean)?;
    let sq = g.square(diff);
    let num = g.add(sq, var0)?;
    let m2 = g.scale(log_std, -2.0);
    let inv_var = g.exp(m2);
    let ratio = g.mul(num, inv_var)?;
    let half = g.scale(ratio, 0.5);
    let per_dim = g.add(half, log_std)?;
    let per_row = g.sum_cols(per_dim);
    let d = old_log_std.len() as f64;
    let per_row = g.add_scalar(per_row, -l0 - 0.5 * d);
    Ok(g.mean(per_row))
}

/// Reparameterised squashed-gaussian draw: `u = μ + σ ξ`, `a = tanh u`.
/// Returns `(a, ln π(a|s))` with the tanh change-of-variables correction.
pub fn squashed_sample(g: &mut Graph<f64>, mean: Var, log_std: Var, noise: &Tensor<f64>) -> Result<(Var, Var)> {
    let xi = g.constant(noise.clone());
    let std = g.exp(log_std);
    let shift = g.mul(xi, std)?;
    let u = g.add(mean, shift)?;
    let a = g.tanh(u);
    // ln N(u; μ, σ) = -ξ²/2 - ln σ - ½ ln 2π, with ξ constant
    let base: Vec<f64> = noise.values().iter().map(|x| -0.5 * x * x - HALF_LN_2PI).collect();
    let base = g.constant(Tensor::from_rows(noise.rows(), noise.cols(), base)?);
    let lp = g.sub(base, log_std)?;
    let jac = g.log1m_tanh_sq(u);
    let lp = g.sub(lp, jac)?;
    Ok((a, g.sum_cols(lp)))
}

/// Graph-free squashed draws for a batch of observations with the given
/// standard-normal `noise`; returns actions `[B, d]` and log-probs `[B, 1]`.
pub fn sample_squashed(actor: &Mlp<f64>, obs: &Tensor<f64>, noise: &Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let mut g = Graph::new();
    let s = g.constant(obs.clone());
    let f = actor.forward(&mut g, s, Params::Frozen)?;
    let (a, lp) = squashed_sample(&mut g, f.output, f.log_std.expect("gaussian head"), noise)?;
    Ok((g.value(a).clone(), g.value(lp).clone()))
}

/// `ln π(a)` for a 1-d squashed gaussian at `a ∈ (-1, 1)`.
pub fn squashed_log_prob(a: f64, mean: f64, log_std: f64) -> f64 {
    let u = a.atanh();
    let z = (u - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - HALF_LN_2PI - (1.0 - a * a).ln()
}

/// Standard normal `[rows, cols]`.
pub fn normal_tensor(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.standard_normal()).collect();
    Tensor::from_rows(rows, cols, data).expect("shape from dimensions")
}

/// Outcome of [`conjugate_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `H x = b` for symmetric positive-definite `H` given only products
/// `H v`. Stops once the residual norm falls below `tol`.
pub fn conjugate_gradient(
    mut hvp: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<CgSolution> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while iterations < max_iters && rr.sqrt() > tol {
        let hp = hvp(&p)?;
        let curvature = dot(&p, &hp);
        if !(curvature > 0.0) {
            return Err(Error::NonFinite { context: format!("conjugate gradient curvature {curvature}") });
        }
        let alpha = rr / curvature;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iterations += 1;
    }
    Ok(CgSolution { x, iterations, residual_norm: rr.sqrt() })
}

/// Pearson correlation; `None` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let (mx, my) = (x[..n].iter().sum::<f64>() / n as f64, y[..n].iter().sum::<f64>() / n as f64);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
