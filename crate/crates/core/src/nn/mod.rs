//! From-scratch feedforward engine: dense layers with maxout / tanh / linear
//! activations, batch normalization, residual shortcuts, Xavier
//! initialization, MSE with L1/L2 penalties, exact backpropagation, Adam with
//! a halving step schedule, and finite-difference gradient verification.
//!
//! Architecture contract: hidden layer 1 is a skip-free stem; from layer 2 on,
//! layers pair into blocks of `residual_period` (= 2), and the closing layer
//! of each block adds the block input to its affine output before batch
//! normalization. Batch norm sits before the activation on hidden layers
//! 2..L; the output layer is a plain affine map. All arithmetic is f64 and
//! every operation is deterministic under its seed.

mod backward;
mod checkpoint;
mod forward;
mod gradcheck;
mod optim;
mod train;

pub use backward::{backward, Gradients};
pub use checkpoint::Checkpoint;
pub use forward::{compute_loss, forward, predict, ForwardCache, Mode};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use optim::{adam_step, adam_update, lr_at, AdamState};
pub use train::{train_network, TrainLog, TrainLogEntry};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical floor inside batch-norm square roots. Normalized batch variance
/// is v / (v + eps), so eps must sit far below the smallest meaningful
/// channel variance for the unit-variance contract to hold at 1e-6.
pub const BN_EPS: f64 = 1e-12;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// Max over `pieces` affine maps per unit; pieces >= 2.
    Maxout { pieces: usize },
    Tanh,
    /// Identity; makes the whole network affine when batch norm is off.
    Linear,
}

impl Activation {
    pub fn pieces(&self) -> usize {
        match self {
            Activation::Maxout { pieces } => *pieces,
            Activation::Tanh | Activation::Linear => 1,
        }
    }
}

/// Network architecture description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    /// Hidden layers per residual block (fixed at 2).
    pub residual_period: usize,
    /// Batch norm before activation on hidden layers 2..L.
    pub batchnorm: bool,
    pub output_dim: usize,
}

impl NetworkSpec {
    /// Full-scale architecture: 21 hidden layers of 50 maxout units.
    pub fn paper(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: 21,
            hidden_width: 50,
            activation: Activation::Maxout { pieces: 2 },
            residual_period: 2,
            batchnorm: true,
            output_dim: 1,
        }
    }

    /// Desk-scale architecture: 6 hidden layers of 50 maxout units.
    pub fn desk(input_dim: usize) -> Self {
        Self {
            hidden_layers: 6,
            ..Self::paper(input_dim)
        }
    }

    /// Single smooth hidden layer (weather forecasters, shallow-net baseline).
    pub fn shallow(input_dim: usize, hidden_width: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: 1,
            hidden_width,
            activation: Activation::Tanh,
            residual_period: 2,
            batchnorm: false,
            output_dim: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be positive".into()));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(Error::InvalidConfig("hidden_width must be positive".into()));
        }
        if let Activation::Maxout { pieces } = self.activation {
            if pieces < 2 {
                return Err(Error::InvalidConfig("maxout pieces must be >= 2".into()));
            }
        }
        if self.residual_period != 2 {
            return Err(Error::InvalidConfig(
                "residual blocks span exactly 2 hidden layers".into(),
            ));
        }
        if self.output_dim != 1 {
            return Err(Error::InvalidConfig("output_dim must be 1".into()));
        }
        Ok(())
    }

    pub fn pieces(&self) -> usize {
        self.activation.pieces()
    }

    /// Whether batch norm applies at 1-based hidden layer `l`.
    pub fn bn_at(&self, l: usize) -> bool {
        self.batchnorm && l >= 2
    }

    /// Residual source for 1-based hidden layer `l`: the closing layer of each
    /// block adds the activation output of layer `l - residual_period`.
    /// Layer 1 is the stem; a trailing unpaired layer has no skip.
    pub fn skip_source(&self, l: usize) -> Option<usize> {
        if l > self.residual_period && (l - 1) % self.residual_period == 0 {
            Some(l - self.residual_period)
        } else {
            None
        }
    }

    fn fan_in(&self, l: usize) -> usize {
        if l == 1 {
            self.input_dim
        } else {
            self.hidden_width
        }
    }
}

/// Affine map with one weight matrix per activation piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// Per piece: (out, in).
    pub w: Vec<Array2<f64>>,
    /// (pieces, out).
    pub b: Array2<f64>,
}

/// Batch-norm parameters and running statistics, per (piece, unit) channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
    pub running_mean: Array2<f64>,
    pub running_var: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub bn: Option<BatchNorm>,
}

/// All learnable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
}

/// Draw weights uniform on +-sqrt(6 / (fan_in + fan_out)); zero biases;
/// batch-norm gamma 1, beta 0, running stats (0, 1).
pub fn xavier_init(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.pieces();

    let draw = |rng: &mut ChaCha8Rng, out: usize, fan_in: usize, pieces: usize| -> Dense {
        let limit = (6.0 / (fan_in + out) as f64).sqrt();
        let w = (0..pieces)
            .map(|_| {
                let mut m = Array2::<f64>::zeros((out, fan_in));
                for v in m.iter_mut() {
                    *v = rng.random_range(-limit..=limit);
                }
                m
            })
            .collect();
        Dense {
            w,
            b: Array2::zeros((pieces, out)),
        }
    };

    let mut hidden = Vec::with_capacity(spec.hidden_layers);
    for l in 1..=spec.hidden_layers {
        let dense = draw(&mut rng, spec.hidden_width, spec.fan_in(l), k);
        let bn = spec.bn_at(l).then(|| BatchNorm {
            gamma: Array2::ones((k, spec.hidden_width)),
            beta: Array2::zeros((k, spec.hidden_width)),
            running_mean: Array2::zeros((k, spec.hidden_width)),
            running_var: Array2::ones((k, spec.hidden_width)),
        });
        hidden.push(HiddenLayer { dense, bn });
    }
    let out_fan_in = if spec.hidden_layers == 0 {
        spec.input_dim
    } else {
        spec.hidden_width
    };
    let output = draw(&mut rng, spec.output_dim, out_fan_in, 1);

    Ok(NetworkParams { hidden, output })
}

impl NetworkParams {
    /// Named views over every learnable tensor, in a fixed order shared with
    /// `Gradients` and `AdamState`. Running statistics are excluded; they are
    /// not optimized.
    pub fn param_slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.hidden.iter_mut().enumerate() {
            for (i, w) in layer.dense.w.iter_mut().enumerate() {
                out.push((
                    format!("hidden{}.w{i}", l + 1),
                    w.as_slice_mut().expect("standard layout"),
                ));
            }
            out.push((
                format!("hidden{}.b", l + 1),
                layer.dense.b.as_slice_mut().expect("standard layout"),
            ));
            if let Some(bn) = &mut layer.bn {
                out.push((
                    format!("hidden{}.bn.gamma", l + 1),
                    bn.gamma.as_slice_mut().expect("standard layout"),
                ));
                out.push((
                    format!("hidden{}.bn.beta", l + 1),
                    bn.beta.as_slice_mut().expect("standard layout"),
                ));
            }
        }
        for (i, w) in self.output.w.iter_mut().enumerate() {
            out.push((
                format!("output.w{i}"),
                w.as_slice_mut().expect("standard layout"),
            ));
        }
        out.push((
            "output.b".to_string(),
            self.output.b.as_slice_mut().expect("standard layout"),
        ));
        out
    }

    /// Update batch-norm running statistics from a training-mode cache:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running_stats(&mut self, cache: &ForwardCache, momentum: f64) {
        for (layer, stats) in self.hidden.iter_mut().zip(cache.batch_stats()) {
            if let (Some(bn), Some((mean, var))) = (&mut layer.bn, stats) {
                bn.running_mean.zip_mut_with(mean, |r, &b| {
                    *r = momentum * *r + (1.0 - momentum) * b;
                });
                bn.running_var.zip_mut_with(var, |r, &b| {
                    *r = momentum * *r + (1.0 - momentum) * b;
                });
            }
        }
    }
}

/// Optimizer, schedule, regularization, and iteration budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// L2 penalty on all hidden-layer weights.
    pub l2_lambda: f64,
    /// L1 penalty on first-layer weights only.
    pub l1_lambda: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Momentum of the batch-norm running statistics.
    pub bn_momentum: f64,
    pub seed: u64,
    /// Logging interval in iterations.
    pub log_every: usize,
}

impl TrainConfig {
    /// Full-scale training schedule.
    pub fn paper(seed: u64) -> Self {
        Self {
            base_lr: 3e-4,
            lr_halving_period: 50_000,
            batch_size: 64,
            max_iterations: 300_000,
            l2_lambda: 1e-4,
            l1_lambda: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            bn_momentum: 0.99,
            seed,
            log_every: 1000,
        }
    }

    /// Desk-scale schedule: same hyperparameters, 30,000 iterations.
    pub fn desk(seed: u64) -> Self {
        Self {
            max_iterations: 30_000,
            ..Self::paper(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::InvalidConfig("base_lr must be positive".into()));
        }
        if self.lr_halving_period == 0 {
            return Err(Error::InvalidConfig("lr_halving_period must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.l1_lambda < 0.0 || self.l2_lambda < 0.0 {
            return Err(Error::InvalidConfig("penalties must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return Err(Error::InvalidConfig("invalid Adam constants".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidConfig("bn_momentum must be in [0, 1)".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be positive".into()));
        }
        Ok(())
    }
}
