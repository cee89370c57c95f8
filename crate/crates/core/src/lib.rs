//! Continuous-action reinforcement learning on idealised climate environments.

pub mod algos;
pub mod autodiff;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod rollout;
pub mod scalar;
pub mod tensor;
pub mod tuner;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use scalar::Scalar;

/// Double-precision instantiations used by the learners.
pub type Tensor = tensor::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type Mlp = nn::Mlp<f64>;
pub type Optimizer = optim::Optimizer<f64>;
