//! Gradient-descent optimizers and target-network blending.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state for one parameter list.
#[derive(Debug, Clone)]
pub struct Optimizer<F> {
    kind: OptimizerKind,
    learning_rate: f64,
    step_count: u64,
    first_moment: Vec<Tensor<F>>,
    second_moment: Vec<Tensor<F>>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &[Tensor<F>]) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {learning_rate}")));
        }
        let (first_moment, second_moment) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => {
                let zeros: Vec<Tensor<F>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
                (zeros.clone(), zeros)
            }
        };
        Ok(Self { kind, learning_rate, step_count: 0, first_moment, second_moment })
    }

    pub fn adam(learning_rate: f64, params: &[Tensor<F>]) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate, params)
    }

    pub fn sgd(learning_rate: f64, params: &[Tensor<F>]) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate, params)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One descent step `params <- params - lr * update(grads)`.
    ///
    /// Non-finite gradients are rejected before any parameter changes.
    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| !p.same_shape(g)) {
            return Err(Error::shape("optimizer_step", "gradients do not align with parameters"));
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite { context: format!("gradient of parameter {i}") });
            }
        }
        self.step_count += 1;
        let lr = F::lit(self.learning_rate);
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, &gv) in p.values_mut().iter_mut().zip(g.values()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step_count as i32;
                let bc1 = F::lit(1.0 - beta1.powi(t));
                let bc2 = F::lit(1.0 - beta2.powi(t));
                let (b1, b2, eps) = (F::lit(beta1), F::lit(beta2), F::lit(eps));
                let one = F::one();
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first_moment).zip(&mut self.second_moment) {
                    for (((pv, &gv), mv), vv) in
                        p.values_mut().iter_mut().zip(g.values()).zip(m.values_mut()).zip(v.values_mut())
                    {
                        *mv = b1 * *mv + (one - b1) * gv;
                        *vv = b2 * *vv + (one - b2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient list.
pub fn grad_norm<F: Scalar>(grads: &[Tensor<F>]) -> F {
    grads.iter().map(Tensor::squared_norm).sum::<F>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<F: Scalar>(grads: &mut [Tensor<F>], max_norm: f64) -> F {
    let norm = grad_norm(grads);
    let max = F::lit(max_norm);
    if norm > max {
        let s = max / (norm + F::lit(1e-6));
        for g in grads.iter_mut() {
            g.values_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn soft_update<F: Scalar>(target: &mut [Tensor<F>], online: &[Tensor<F>], tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau must lie in [0, 1], got {tau}")));
    }
    if target.len() != online.len() || target.iter().zip(online).any(|(t, o)| !t.same_shape(o)) {
        return Err(Error::shape("soft_update", "target and online parameters differ"));
    }
    let (t_w, o_w) = (F::lit(1.0 - tau), F::lit(tau));
    for (t, o) in target.iter_mut().zip(online) {
        if tau == 1.0 {
            t.values_mut().copy_from_slice(o.values());
            continue;
        }
        for (tv, &ov) in t.values_mut().iter_mut().zip(o.values()) {
            *tv = o_w * ov + t_w * *tv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::scalar(v)]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::adam()] {
            let mut p = scalar(0.7);
            let mut opt = Optimizer::new(kind, 0.1, &p).unwrap();
            opt.step(&mut p, &scalar(0.0)).unwrap();
            assert_eq!(p[0].item(), 0.7);
            assert_eq!(opt.step_count(), 1);
        }
    }

    #[test]
    fn sgd_definition() {
        let mut p = scalar(0.0);
        let mut opt = Optimizer::sgd(0.1, &p).unwrap();
        opt.step(&mut p, &scalar(1.0)).unwrap();
        assert!((p[0].item() + 0.1).abs() < 1e-15);
    }

    #[test]
    fn adam_descends_a_parabola() {
        let mut p = scalar(1.0);
        let mut opt = Optimizer::adam(0.1, &p).unwrap();
        for _ in 0..200 {
            let g = scalar(2.0 * p[0].item());
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p[0].item().abs() < 1e-2, "x = {}", p[0].item());
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = scalar(1.0);
        let mut opt = Optimizer::adam(0.1, &p).unwrap();
        assert!(matches!(opt.step(&mut p, &scalar(f64::NAN)), Err(Error::NonFinite { .. })));
        assert_eq!(p[0].item(), 1.0);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn soft_update_cases() {
        let online = scalar(2.0);
        let mut t = scalar(0.0);
        soft_update(&mut t, &online, 0.5).unwrap();
        assert_eq!(t[0].item(), 1.0);
        soft_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t[0].item(), 1.0);
        soft_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t[0].item(), 2.0);
        assert!(soft_update(&mut t, &online, 1.5).is_err());
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Tensor::row(&[3.0, 4.0])];
        let before = clip_grad_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((grad_norm::<f64>(&g) - 1.0).abs() < 1e-5);
    }
}
