//! Multilayer perceptrons and their checkpoint format.

use std::io::{BufRead, Write};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bounds of the free log-std parameter of gaussian heads.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const CHECKPOINT_MAGIC: &str = "climrl-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputHead<F> {
    Linear,
    /// `mid + half * tanh(z)`, mapping onto the box `[low, high]`.
    TanhScaled { low: Vec<F>, high: Vec<F> },
    /// The output is a mean; a free per-dimension log-std parameter is
    /// appended to the parameter list. `squashed` marks policies that pass
    /// samples through `tanh`.
    Gaussian { squashed: bool },
}

/// Whether a forward pass records parameters as differentiable leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Params {
    Trainable,
    Frozen,
}

/// Graph handles produced by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpForward {
    pub output: Var,
    /// Clamped log-std row, gaussian heads only.
    pub log_std: Option<Var>,
    /// Parameter leaves in declaration order.
    pub params: Vec<Var>,
}

/// Fully connected network with a configurable output head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    layer_sizes: Vec<usize>,
    activation: Activation,
    head: OutputHead<F>,
    params: Vec<Tensor<F>>,
}

impl<F: Scalar> Mlp<F> {
    /// Initialises weights and biases uniformly in `±1/sqrt(fan_in)`; the
    /// final layer is multiplied by `final_layer_scale`.
    pub fn new(
        layer_sizes: Vec<usize>,
        activation: Activation,
        head: OutputHead<F>,
        final_layer_scale: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {layer_sizes:?}")));
        }
        let out = *layer_sizes.last().unwrap();
        if let OutputHead::TanhScaled { low, high } = &head {
            if low.len() != out || high.len() != out || low.iter().zip(high).any(|(l, h)| l >= h) {
                return Err(Error::invalid("tanh head bounds must match output width with low < high"));
            }
        }
        let layers = layer_sizes.len() - 1;
        let mut params = Vec::with_capacity(2 * layers + 1);
        for (l, w) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if l + 1 == layers { final_layer_scale } else { 1.0 };
            let mut draw = |n: usize| -> Vec<F> { (0..n).map(|_| F::lit(scale * rng.uniform_range(-bound, bound))).collect() };
            params.push(Tensor::from_rows(fan_in, fan_out, draw(fan_in * fan_out))?);
            params.push(Tensor::from_rows(1, fan_out, draw(fan_out))?);
        }
        if matches!(head, OutputHead::Gaussian { .. }) {
            params.push(Tensor::zeros(&[1, out]));
        }
        Ok(Self { layer_sizes, activation, head, params })
    }

    /// Builds a network from explicit parameters (checkpoints, tests).
    pub fn from_parts(layer_sizes: Vec<usize>, activation: Activation, head: OutputHead<F>, params: Vec<Tensor<F>>) -> Result<Self> {
        let expected = Self::expected_shapes(&layer_sizes, &head);
        if params.len() != expected.len() || params.iter().zip(&expected).any(|(p, s)| p.shape() != s.as_slice()) {
            return Err(Error::shape("Mlp::from_parts", format!("parameters do not match layers {layer_sizes:?}")));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { context: "Mlp parameters".into() });
        }
        Ok(Self { layer_sizes, activation, head, params })
    }

    fn expected_shapes(layer_sizes: &[usize], head: &OutputHead<F>) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for w in layer_sizes.windows(2) {
            shapes.push(vec![w[0], w[1]]);
            shapes.push(vec![1, w[1]]);
        }
        if matches!(head, OutputHead::Gaussian { .. }) {
            shapes.push(vec![1, *layer_sizes.last().unwrap()]);
        }
        shapes
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head(&self) -> &OutputHead<F> {
        &self.head
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn check_input(&self, input: &Tensor<F>) -> Result<()> {
        if input.shape().len() != 2 || input.cols() != self.input_width() {
            return Err(Error::shape("Mlp::forward", format!("input {:?}, network expects {} columns", input.shape(), self.input_width())));
        }
        Ok(())
    }

    /// Records the forward pass on `g`.
    pub fn forward(&self, g: &mut Graph<F>, input: Var, mode: Params) -> Result<MlpForward> {
        self.check_input(g.value(input))?;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| match mode {
                Params::Trainable => g.param(p.clone()),
                Params::Frozen => g.constant(p.clone()),
            })
            .collect();
        let mut h = input;
        for l in 0..self.n_layers() {
            let z = g.matmul(h, params[2 * l])?;
            let z = g.add(z, params[2 * l + 1])?;
            h = if l + 1 == self.n_layers() {
                z
            } else {
                match self.activation {
                    Activation::Tanh => g.tanh(z),
                    Activation::Relu => g.relu(z),
                }
            };
        }
        let mut log_std = None;
        let output = match &self.head {
            OutputHead::Linear => h,
            OutputHead::TanhScaled { low, high } => {
                let (mid, half) = mid_half(low, high);
                let t = g.tanh(h);
                let half = g.constant(Tensor::row(&half));
                let mid = g.constant(Tensor::row(&mid));
                let scaled = g.mul(t, half)?;
                g.add(scaled, mid)?
            }
            OutputHead::Gaussian { .. } => {
                let raw = *params.last().unwrap();
                log_std = Some(g.clamp(raw, F::lit(LOG_STD_MIN), F::lit(LOG_STD_MAX)));
                h
            }
        };
        Ok(MlpForward { output, log_std, params })
    }

    /// Graph-free forward pass; returns the head output (the mean for gaussian heads).
    pub fn predict(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_input(input)?;
        let mut h = input.clone();
        for l in 0..self.n_layers() {
            let mut z = h.matmul(&self.params[2 * l])?;
            let b = self.params[2 * l + 1].values();
            let cols = z.cols();
            for (i, v) in z.values_mut().iter_mut().enumerate() {
                *v += b[i % cols];
            }
            if l + 1 < self.n_layers() {
                match self.activation {
                    Activation::Tanh => z.values_mut().iter_mut().for_each(|v| *v = v.tanh()),
                    Activation::Relu => z.values_mut().iter_mut().for_each(|v| *v = v.max(F::zero())),
                }
            }
            h = z;
        }
        if let OutputHead::TanhScaled { low, high } = &self.head {
            let (mid, half) = mid_half(low, high);
            let cols = h.cols();
            for (i, v) in h.values_mut().iter_mut().enumerate() {
                *v = mid[i % cols] + half[i % cols] * v.tanh();
            }
        }
        Ok(h)
    }

    /// Clamped log-std of a gaussian head.
    pub fn log_std(&self) -> Option<Vec<F>> {
        match self.head {
            OutputHead::Gaussian { .. } => Some(
                self.params
                    .last()
                    .unwrap()
                    .values()
                    .iter()
                    .map(|&v| v.max(F::lit(LOG_STD_MIN)).min(F::lit(LOG_STD_MAX)))
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Writes the versioned text checkpoint.
    ///
    /// Values are printed with Rust's shortest round-trip formatting, so a
    /// save/load cycle is bit-exact for `f64`.
    pub fn save<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(w, "layer_sizes {}", join(&self.layer_sizes))?;
        writeln!(w, "activation {}", self.activation.tag())?;
        match &self.head {
            OutputHead::Linear => writeln!(w, "head linear")?,
            OutputHead::TanhScaled { low, high } => {
                writeln!(w, "head tanh_scaled")?;
                writeln!(w, "low {}", join(low))?;
                writeln!(w, "high {}", join(high))?;
            }
            OutputHead::Gaussian { squashed: false } => writeln!(w, "head gaussian")?,
            OutputHead::Gaussian { squashed: true } => writeln!(w, "head squashed_gaussian")?,
        }
        writeln!(w, "params {}", self.params.len())?;
        for p in &self.params {
            writeln!(w, "shape {}", join(p.shape()))?;
            writeln!(w, "{}", join(p.values()))?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(Error::parse("checkpoint", e.to_string())),
                None => Err(Error::parse("checkpoint", format!("unexpected end of file, expected {what}"))),
            }
        };
        let header = next("header")?;
        let mut hp = header.split_whitespace();
        if hp.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::parse("checkpoint", "missing magic header"));
        }
        let version: u32 = parse_one(hp.next(), "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::parse("checkpoint", format!("unsupported version {version}")));
        }
        let layer_sizes: Vec<usize> = parse_list(&next("layer_sizes")?, "layer_sizes")?;
        let activation = match keyed(&next("activation")?, "activation")? {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            other => return Err(Error::parse("checkpoint", format!("unknown activation `{other}`"))),
        };
        let head = match keyed(&next("head")?, "head")? {
            "linear" => OutputHead::Linear,
            "gaussian" => OutputHead::Gaussian { squashed: false },
            "squashed_gaussian" => OutputHead::Gaussian { squashed: true },
            "tanh_scaled" => {
                let low: Vec<f64> = parse_list(&next("low")?, "low")?;
                let high: Vec<f64> = parse_list(&next("high")?, "high")?;
                OutputHead::TanhScaled { low: low.into_iter().map(F::lit).collect(), high: high.into_iter().map(F::lit).collect() }
            }
            other => return Err(Error::parse("checkpoint", format!("unknown head `{other}`"))),
        };
        let count: usize = parse_one(keyed(&next("params")?, "params")?.split_whitespace().next(), "params")?;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let shape: Vec<usize> = parse_list(&next("shape")?, "shape")?;
            let line = next("values")?;
            let values = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map(F::lit).map_err(|e| Error::parse("checkpoint values", e.to_string())))
                .collect::<Result<Vec<F>>>()?;
            params.push(Tensor::new(shape, values)?);
        }
        Self::from_parts(layer_sizes, activation, head, params)
    }
}

fn mid_half<F: Scalar>(low: &[F], high: &[F]) -> (Vec<F>, Vec<F>) {
    let half = F::lit(0.5);
    (
        low.iter().zip(high).map(|(&l, &h)| (l + h) * half).collect(),
        low.iter().zip(high).map(|(&l, &h)| (h - l) * half).collect(),
    )
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn keyed<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .map(str::trim)
        .ok_or_else(|| Error::parse("checkpoint", format!("expected `{key}` line, got `{line}`")))
}

fn parse_one<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::parse("checkpoint", format!("bad {what}")))
}

fn parse_list<T: std::str::FromStr>(line: &str, key: &str) -> Result<Vec<T>> {
    keyed(line, key)?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse("checkpoint", format!("bad value `{t}` in {key}"))))
        .collect()
}
