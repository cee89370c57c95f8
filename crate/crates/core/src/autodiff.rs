//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] once walks the tape in reverse and returns the
//! gradient of a scalar root with respect to every differentiable leaf.
//! Binary elementwise ops broadcast along any dimension of size 1.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_into, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, F),
    AddScalar(Var, F),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, F, F),
    /// `ln(1 - tanh(x)^2)`, evaluated stably.
    Log1mTanhSq(Var),
    SumAll(Var),
    MeanAll(Var),
    /// Row-wise sum, `[n, m] -> [n, 1]`.
    SumCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    /// Mean quantile-Huber loss of `pred [n, q]` against constant atoms.
    QuantileHuber { pred: Var, target: Tensor<F>, fractions: Vec<F>, kappa: F },
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Clone, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    consumed: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for `vars` in order; each must be a differentiable leaf.
    pub fn collect(&self, vars: &[Var]) -> Vec<Tensor<F>> {
        vars.iter()
            .map(|v| self.get(*v).cloned().expect("gradient requested for a non-differentiable node"))
            .collect()
    }
}

fn shape2<F: Scalar>(t: &Tensor<F>) -> (usize, usize) {
    match t.shape() {
        [r, c] => (*r, *c),
        [n] => (1, *n),
        [] => (1, 1),
        s => panic!("autodiff supports rank <= 2, got {s:?}"),
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

/// Applies `f` elementwise with broadcasting.
fn zip_broadcast<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, op: &'static str, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
    let (ar, ac) = shape2(a);
    let (br, bc) = shape2(b);
    let (r, c) = match (broadcast_dim(ar, br), broadcast_dim(ac, bc)) {
        (Some(r), Some(c)) => (r, c),
        _ => return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape()))),
    };
    let (av, bv) = (a.values(), b.values());
    let mut out = Vec::with_capacity(r * c);
    if ar == br && ac == bc {
        out.extend(av.iter().zip(bv).map(|(&x, &y)| f(x, y)));
    } else {
        for i in 0..r {
            let ia = if ar == 1 { 0 } else { i };
            let ib = if br == 1 { 0 } else { i };
            for j in 0..c {
                let x = av[ia * ac + if ac == 1 { 0 } else { j }];
                let y = bv[ib * bc + if bc == 1 { 0 } else { j }];
                out.push(f(x, y));
            }
        }
    }
    Tensor::from_rows(r, c, out)
}

/// Sums a broadcast gradient `g [r, c]` back down to `target` shape.
fn reduce_to<F: Scalar>(g: Tensor<F>, target: (usize, usize)) -> Tensor<F> {
    let (r, c) = shape2(&g);
    if (r, c) == target {
        return g;
    }
    let (tr, tc) = target;
    let mut out = vec![F::zero(); tr * tc];
    let gv = g.values();
    for i in 0..r {
        let oi = if tr == 1 { 0 } else { i };
        for j in 0..c {
            let oj = if tc == 1 { 0 } else { j };
            out[oi * tc + oj] += gv[i * c + j];
        }
    }
    Tensor::from_rows(tr, tc, out).expect("reduced shape")
}

/// Expands `v [vr, vc]` to `[r, c]` by broadcasting (values only).
fn expand<F: Scalar>(v: &Tensor<F>, r: usize, c: usize) -> Vec<F> {
    let (vr, vc) = shape2(v);
    if (vr, vc) == (r, c) {
        return v.values().to_vec();
    }
    let vv = v.values();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let ii = if vr == 1 { 0 } else { i };
        for j in 0..c {
            out.push(vv[ii * vc + if vc == 1 { 0 } else { j }]);
        }
    }
    out
}

/// Quantile-Huber penalty `|tau - 1{u<0}| * H_kappa(u)` for residual `u = target - prediction`.
pub fn quantile_huber<F: Scalar>(u: F, tau: F, kappa: F) -> F {
    let abs = u.abs();
    let huber = if abs <= kappa { F::lit(0.5) * u * u } else { kappa * (abs - F::lit(0.5) * kappa) };
    let indicator = if u < F::zero() { F::one() } else { F::zero() };
    (tau - indicator).abs() * huber
}

/// Derivative of [`quantile_huber`] with respect to `u`.
fn quantile_huber_du<F: Scalar>(u: F, tau: F, kappa: F) -> F {
    let dh = if u.abs() <= kappa { u } else { kappa * u.signum() };
    let indicator = if u < F::zero() { F::one() } else { F::zero() };
    (tau - indicator).abs() * dh
}

/// Midpoint quantile fractions `(2k - 1) / (2n)`, `k = 1..=n`.
pub fn quantile_fractions<F: Scalar>(n: usize) -> Vec<F> {
    (1..=n).map(|k| F::lit((2 * k - 1) as f64 / (2 * n) as f64)).collect()
}

fn log1m_tanh_sq<F: Scalar>(x: F) -> F {
    // ln(1 - tanh^2 x) = 2 (ln 2 - x - softplus(-2x))
    let z = -(x + x);
    let softplus = if z > F::zero() { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    (F::lit(std::f64::consts::LN_2) - x - softplus) * F::lit(2.0)
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input (a parameter).
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A copy of `v`'s value that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = zip_broadcast(self.value(a), self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = zip_broadcast(self.value(a), self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = zip_broadcast(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = zip_broadcast(self.value(a), self.value(b), "minimum", |x, y| if y < x { y } else { x })?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Minimum(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -F::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a, c), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(F::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(F::zero()));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(F::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(F::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: F, hi: F) -> Var {
        let value = self.value(a).map(|x| x.max(lo).min(hi));
        let rg = self.rg(a);
        self.push(value, Op::Clamp(a, lo, hi), rg)
    }

    /// `ln(1 - tanh(x)^2)`, the log-Jacobian of tanh squashing.
    pub fn log1m_tanh_sq(&mut self, a: Var) -> Var {
        let value = self.value(a).map(log1m_tanh_sq);
        let rg = self.rg(a);
        self.push(value, Op::Log1mTanhSq(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: F = self.value(a).values().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: F = t.values().iter().copied().sum::<F>() / F::from_usize_lossy(t.len().max(1));
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::MeanAll(a), rg)
    }

    /// Row sums, `[n, m] -> [n, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = shape2(t);
        let data = (0..r).map(|i| t.values()[i * c..(i + 1) * c].iter().copied().sum()).collect();
        let value = Tensor::from_rows(r, 1, data).expect("row sums");
        let rg = self.rg(a);
        self.push(value, Op::SumCols(a), rg)
    }

    /// Row means, `[n, m] -> [n, 1]`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let c = shape2(self.value(a)).1;
        let s = self.sum_cols(a);
        self.scale(s, F::one() / F::from_usize_lossy(c.max(1)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = shape2(self.value(parts[0])).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = shape2(self.value(p));
            if r != rows {
                return Err(Error::shape("concat_cols", format!("row counts {rows} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).values()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_rows(rows, total, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = shape2(t);
        if start + width > c {
            return Err(Error::shape("slice_cols", format!("{start}+{width} > {c}")));
        }
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&t.values()[i * c + start..i * c + start + width]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_rows(r, width, data)?, Op::SliceCols(a, start), rg))
    }

    /// Mean over rows, quantiles and target atoms of
    /// `quantile_huber(target[j, m] - pred[j, k], fractions[k], kappa)`.
    pub fn quantile_huber_loss(&mut self, pred: Var, target: Tensor<F>, fractions: Vec<F>, kappa: F) -> Result<Var> {
        let p = self.value(pred);
        let (n, q) = shape2(p);
        let (tn, m) = shape2(&target);
        if tn != n || fractions.len() != q || m == 0 {
            return Err(Error::shape(
                "quantile_huber_loss",
                format!("pred {:?}, target {:?}, {} fractions", p.shape(), target.shape(), fractions.len()),
            ));
        }
        let mut total = F::zero();
        for j in 0..n {
            for (k, &tau) in fractions.iter().enumerate() {
                let theta = p.values()[j * q + k];
                for &y in &target.values()[j * m..(j + 1) * m] {
                    total += quantile_huber(y - theta, tau, kappa);
                }
            }
        }
        let value = Tensor::scalar(total / F::from_usize_lossy(n * q * m));
        let rg = self.rg(pred);
        Ok(self.push(value, Op::QuantileHuber { pred, target, fractions, kappa }, rg))
    }

    /// Gradient of the `[1, 1]` node `root` with respect to every differentiable leaf.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<F>> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward", format!("root must be scalar, got {:?}", self.value(root).shape())));
        }
        let seed = Tensor::filled(self.value(root).shape(), F::one());
        self.backward_with(root, seed)
    }

    /// Vector-Jacobian product of `root` with `seed`.
    ///
    /// The tape may be consumed only once; a second call returns
    /// [`Error::GraphConsumed`].
    pub fn backward_with(&mut self, root: Var, seed: Tensor<F>) -> Result<Gradients<F>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if seed.shape() != self.value(root).shape() {
            return Err(Error::shape("backward", format!("seed {:?} vs root {:?}", seed.shape(), self.value(root).shape())));
        }
        self.value(root).ensure_finite("loss")?;
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            for (target, contrib) in self.local_grads(&node.op, &node.value, g)? {
                if !self.nodes[target.0].requires_grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => {
                        for (a, c) in acc.values_mut().iter_mut().zip(contrib.values()) {
                            *a += *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                match &grads[i] {
                    Some(g) => g.ensure_finite("gradient")?,
                    None => grads[i] = Some(Tensor::zeros(node.value.shape())),
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, op: &Op<F>, out: &Tensor<F>, g: Tensor<F>) -> Result<Vec<(Var, Tensor<F>)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let unary = |a: Var, f: &dyn Fn(F, F, F) -> F| -> Vec<(Var, Tensor<F>)> {
            // f(input, output, upstream)
            let x = val(a);
            let data = x.values().iter().zip(out.values()).zip(g.values()).map(|((&xi, &yi), &gi)| f(xi, yi, gi)).collect();
            vec![(a, Tensor::new(x.shape().to_vec(), data).expect("unary grad"))]
        };
        let (gr, gc) = shape2(&g);
        Ok(match op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k) = shape2(av);
                let m = shape2(bv).1;
                let mut out = Vec::with_capacity(2);
                if self.rg(*a) {
                    let mut ga = vec![F::zero(); n * k];
                    let bt = bv.transpose();
                    matmul_into(g.values(), bt.values(), &mut ga, n, m, k);
                    out.push((*a, Tensor::from_rows(n, k, ga)?));
                }
                if self.rg(*b) {
                    let mut gb = vec![F::zero(); k * m];
                    let at = av.transpose();
                    matmul_into(at.values(), g.values(), &mut gb, k, n, m);
                    out.push((*b, Tensor::from_rows(k, m, gb)?));
                }
                out
            }
            Op::Add(a, b) => vec![
                (*a, reduce_to(g.clone(), shape2(val(*a)))),
                (*b, reduce_to(g, shape2(val(*b)))),
            ],
            Op::Sub(a, b) => {
                let neg = g.map(|x| -x);
                vec![(*a, reduce_to(g, shape2(val(*a)))), (*b, reduce_to(neg, shape2(val(*b))))]
            }
            Op::Mul(a, b) => {
                let ae = expand(val(*a), gr, gc);
                let be = expand(val(*b), gr, gc);
                let ga: Vec<F> = g.values().iter().zip(&be).map(|(&x, &y)| x * y).collect();
                let gb: Vec<F> = g.values().iter().zip(&ae).map(|(&x, &y)| x * y).collect();
                vec![
                    (*a, reduce_to(Tensor::from_rows(gr, gc, ga)?, shape2(val(*a)))),
                    (*b, reduce_to(Tensor::from_rows(gr, gc, gb)?, shape2(val(*b)))),
                ]
            }
            Op::Minimum(a, b) => {
                let ae = expand(val(*a), gr, gc);
                let be = expand(val(*b), gr, gc);
                let mut ga = Vec::with_capacity(gr * gc);
                let mut gb = Vec::with_capacity(gr * gc);
                for ((&gi, &x), &y) in g.values().iter().zip(&ae).zip(&be) {
                    if y < x {
                        ga.push(F::zero());
                        gb.push(gi);
                    } else {
                        ga.push(gi);
                        gb.push(F::zero());
                    }
                }
                vec![
                    (*a, reduce_to(Tensor::from_rows(gr, gc, ga)?, shape2(val(*a)))),
                    (*b, reduce_to(Tensor::from_rows(gr, gc, gb)?, shape2(val(*b)))),
                ]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|x| x * *c))],
            Op::AddScalar(a, _) => vec![(*a, g)],
            Op::Tanh(a) => unary(*a, &|_, y, gi| gi * (F::one() - y * y)),
            Op::Relu(a) => unary(*a, &|x, _, gi| if x > F::zero() { gi } else { F::zero() }),
            Op::Exp(a) => unary(*a, &|_, y, gi| gi * y),
            Op::Log(a) => unary(*a, &|x, _, gi| gi / x),
            Op::Square(a) => unary(*a, &|x, _, gi| gi * (x + x)),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                unary(*a, &move |x, _, gi| if x < lo || x > hi { F::zero() } else { gi })
            }
            Op::Log1mTanhSq(a) => unary(*a, &|x, _, gi| gi * F::lit(-2.0) * x.tanh()),
            Op::SumAll(a) => vec![(*a, Tensor::filled(val(*a).shape(), g.item()))],
            Op::MeanAll(a) => {
                let n = F::from_usize_lossy(val(*a).len().max(1));
                vec![(*a, Tensor::filled(val(*a).shape(), g.item() / n))]
            }
            Op::SumCols(a) => {
                let (r, c) = shape2(val(*a));
                let data = (0..r).flat_map(|i| std::iter::repeat_n(g.values()[i], c)).collect();
                vec![(*a, Tensor::new(val(*a).shape().to_vec(), data)?)]
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let (r, w) = shape2(val(p));
                    let mut data = Vec::with_capacity(r * w);
                    for i in 0..r {
                        data.extend_from_slice(&g.values()[i * gc + offset..i * gc + offset + w]);
                    }
                    out.push((p, Tensor::new(val(p).shape().to_vec(), data)?));
                    offset += w;
                }
                out
            }
            Op::SliceCols(a, start) => {
                let (r, c) = shape2(val(*a));
                let mut data = vec![F::zero(); r * c];
                for i in 0..r {
                    data[i * c + start..i * c + start + gc].copy_from_slice(&g.values()[i * gc..(i + 1) * gc]);
                }
                vec![(*a, Tensor::new(val(*a).shape().to_vec(), data)?)]
            }
            Op::QuantileHuber { pred, target, fractions, kappa } => {
                let p = val(*pred);
                let (n, q) = shape2(p);
                let m = shape2(target).1;
                let scale = g.item() / F::from_usize_lossy(n * q * m);
                let mut data = vec![F::zero(); n * q];
                for j in 0..n {
                    for (k, &tau) in fractions.iter().enumerate() {
                        let theta = p.values()[j * q + k];
                        let s: F = target.values()[j * m..(j + 1) * m]
                            .iter()
                            .map(|&y| quantile_huber_du(y - theta, tau, *kappa))
                            .sum();
                        // d/dtheta of rho(y - theta) = -rho'(u)
                        data[j * q + k] = -s * scale;
                    }
                }
                vec![(*pred, Tensor::new(p.shape().to_vec(), data)?)]
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(r: usize, c: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_rows(r, c, v.to_vec()).unwrap()
    }

    /// Central differences of a scalar function of one tensor.
    fn numeric_grad(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                p.values_mut()[i] += h;
                let mut m = x.clone();
                m.values_mut()[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn check(x: Tensor<f64>, build: impl Fn(&mut Graph<f64>, Var) -> Var) {
        let eval = |xt: &Tensor<f64>| {
            let mut g = Graph::new();
            let v = g.param(xt.clone());
            let out = build(&mut g, v);
            g.value(out).item()
        };
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let out = build(&mut g, v);
        let grads = g.backward(out).unwrap();
        let analytic = grads.get(v).unwrap().values().to_vec();
        let numeric = numeric_grad(&x, eval);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-6 * (1.0 + n.abs()), "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let x = t(2, 3, &[0.3, -0.7, 1.1, 0.2, -0.4, 0.9]);
        check(x.clone(), |g, v| {
            let a = g.tanh(v);
            let b = g.exp(a);
            let c = g.square(b);
            g.mean(c)
        });
        check(x.clone(), |g, v| {
            let a = g.log1m_tanh_sq(v);
            let s = g.sum_cols(a);
            g.sum(s)
        });
        check(x.clone(), |g, v| {
            let row = g.constant(t(1, 3, &[0.5, -1.0, 2.0]));
            let col = g.constant(t(2, 1, &[1.5, -0.5]));
            let a = g.mul(v, row).unwrap();
            let b = g.sub(a, col).unwrap();
            let c = g.minimum(b, v).unwrap();
            g.sum(c)
        });
        check(x, |g, v| {
            let s = g.slice_cols(v, 1, 2).unwrap();
            let cat = g.concat_cols(&[s, v]).unwrap();
            let sq = g.square(cat);
            g.mean(sq)
        });
    }

    #[test]
    fn broadcast_parameter_gets_reduced_gradient() {
        // d/db sum(x + b) = number of rows, per column
        let mut g = Graph::new();
        let x = g.constant(t(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.param(t(1, 2, &[0.0, 0.0]));
        let y = g.add(x, b).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(b).unwrap().values(), &[3.0, 3.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.square(x);
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(Error::GraphConsumed)));
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(-1.0));
        let y = g.log(x);
        assert!(matches!(g.backward(y), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn quantile_huber_hand_values() {
        assert_eq!(quantile_huber(0.0, 0.3, 1.0), 0.0);
        assert!((quantile_huber::<f64>(1.0, 0.25, 1.0) - 0.125).abs() < 1e-12);
        // u < 0 flips the asymmetry weight to 1 - tau
        assert!((quantile_huber::<f64>(-1.0, 0.25, 1.0) - 0.375).abs() < 1e-12);
        // linear branch beyond kappa: |u| - kappa/2
        assert!((quantile_huber::<f64>(3.0, 0.5, 1.0) - 0.5 * 2.5).abs() < 1e-12);
    }

    #[test]
    fn quantile_huber_loss_gradient() {
        let target = t(2, 3, &[0.4, -1.5, 2.5, 0.0, 0.3, -0.2]);
        let fr = quantile_fractions::<f64>(2);
        check(t(2, 2, &[0.1, 0.7, -0.3, 1.9]), move |g, v| g.quantile_huber_loss(v, target.clone(), fr.clone(), 1.0).unwrap());
    }

    #[test]
    fn works_in_single_precision() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::scalar(3.0f32));
        let y = g.square(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0f32);
    }
}
