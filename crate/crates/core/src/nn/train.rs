//! Minibatch training loop: seeded epoch-wise shuffling, TRAIN-mode forward,
//! exact backward, Adam with the halving schedule, and running-stat updates.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::backward;
use super::forward::{compute_loss, forward, predict, Mode};
use super::optim::{adam_step, lr_at, AdamState};
use super::{xavier_init, NetworkParams, NetworkSpec, TrainConfig};
use crate::derive_seed;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub iteration: usize,
    pub lr: f64,
    pub batch_loss: f64,
    pub validation_rmse: Option<f64>,
}

/// Loss trace recorded every `log_every` iterations plus the final one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
}

impl TrainLog {
    pub fn final_entry(&self) -> Option<&TrainLogEntry> {
        self.entries.last()
    }
}

fn rmse(predictions: &Array1<f64>, targets: &Array1<f64>) -> f64 {
    let n = predictions.len() as f64;
    (predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Train a network from Xavier initialization. Deterministic under
/// `config.seed`: initialization and minibatch order derive from it.
///
/// Minibatches are drawn by reshuffling the row indices each epoch and taking
/// consecutive chunks; a trailing chunk is kept unless it has a single row,
/// which batch statistics cannot normalize.
pub fn train_network(
    spec: &NetworkSpec,
    config: &TrainConfig,
    design: &Array2<f64>,
    targets: &Array1<f64>,
    validation: Option<(&Array2<f64>, &Array1<f64>)>,
) -> Result<(NetworkParams, TrainLog)> {
    spec.validate()?;
    config.validate()?;
    if design.nrows() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} design rows vs {} targets",
            design.nrows(),
            targets.len()
        )));
    }
    if design.nrows() < 2 {
        return Err(Error::InvalidData("training needs at least 2 rows".into()));
    }
    if design.ncols() != spec.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "design width {} != input_dim {}",
            design.ncols(),
            spec.input_dim
        )));
    }
    if config.batch_size < 2 {
        return Err(Error::InvalidConfig(
            "batch_size must be >= 2: TRAIN-mode batch statistics need variance".into(),
        ));
    }
    if let Some((vx, vy)) = validation {
        if vx.nrows() != vy.len() || vx.ncols() != spec.input_dim {
            return Err(Error::ShapeMismatch("validation set misshapen".into()));
        }
    }

    let mut params = xavier_init(spec, derive_seed(config.seed, "init"))?;
    let mut adam = AdamState::new(&mut params);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "minibatch"));
    let mut order: Vec<usize> = (0..design.nrows()).collect();
    let mut cursor = order.len(); // force a shuffle on the first iteration
    let mut log = TrainLog::default();

    let mut iteration = 0usize;
    while iteration < config.max_iterations {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        let idx = &order[cursor..end];
        cursor = end;
        if idx.len() < 2 {
            // Single-row trailing chunk: batch norm cannot normalize it.
            continue;
        }

        let batch = design.select(Axis(0), idx);
        let batch_targets = Array1::from_iter(idx.iter().map(|&i| targets[i]));

        let cache = forward(&params, spec, &batch, Mode::Train).map_err(|e| match e {
            Error::NonFinite { context, .. } => Error::NonFinite { context, iteration },
            other => other,
        })?;
        let loss = compute_loss(
            cache.predictions(),
            &batch_targets,
            &params,
            config.l1_lambda,
            config.l2_lambda,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "training loss".into(),
                iteration,
            });
        }
        params.update_running_stats(&cache, config.bn_momentum);

        let grads = backward(
            &cache,
            &batch_targets,
            &params,
            spec,
            config.l1_lambda,
            config.l2_lambda,
        )?;
        adam_step(&mut params, &grads, &mut adam, lr_at(iteration, config), config)?;

        if iteration % config.log_every == 0 || iteration + 1 == config.max_iterations {
            let validation_rmse = match validation {
                Some((vx, vy)) => Some(rmse(&predict(&params, spec, vx)?, vy)),
                None => None,
            };
            log.entries.push(TrainLogEntry {
                iteration,
                lr: lr_at(iteration, config),
                batch_loss: loss,
                validation_rmse,
            });
        }
        iteration += 1;
    }

    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::Rng;

    fn linear_data(seed: u64, n: usize) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let w = [1.0, -2.0, 0.5];
        let y = Array1::from_shape_fn(n, |i| {
            x[[i, 0]] * w[0] + x[[i, 1]] * w[1] + x[[i, 2]] * w[2]
        });
        (x, y)
    }

    #[test]
    fn linear_case_converges_on_noiseless_data() {
        let spec = NetworkSpec {
            input_dim: 3,
            hidden_layers: 0,
            hidden_width: 0,
            activation: Activation::Linear,
            residual_period: 2,
            batchnorm: false,
            output_dim: 1,
        };
        let (x, y) = linear_data(1, 256);
        let config = TrainConfig {
            max_iterations: 10_000,
            l1_lambda: 0.0,
            l2_lambda: 0.0,
            ..TrainConfig::desk(5)
        };
        let (params, _) = train_network(&spec, &config, &x, &y, None).unwrap();
        let rmse_final = rmse(&predict(&params, &spec, &x).unwrap(), &y);
        assert!(rmse_final < 1e-2, "training RMSE {rmse_final}");
    }

    #[test]
    fn final_training_loss_is_below_initial() {
        let spec = NetworkSpec {
            input_dim: 3,
            hidden_layers: 2,
            hidden_width: 8,
            activation: Activation::Maxout { pieces: 2 },
            residual_period: 2,
            batchnorm: true,
            output_dim: 1,
        };
        let (x, y) = linear_data(2, 128);
        let config = TrainConfig {
            max_iterations: 2000,
            log_every: 100,
            ..TrainConfig::desk(3)
        };
        let (params, log) = train_network(&spec, &config, &x, &y, Some((&x, &y))).unwrap();
        let initial = xavier_init(&spec, derive_seed(config.seed, "init")).unwrap();
        let rmse_initial = rmse(&predict(&initial, &spec, &x).unwrap(), &y);
        let rmse_final = rmse(&predict(&params, &spec, &x).unwrap(), &y);
        assert!(rmse_final < rmse_initial, "{rmse_final} vs {rmse_initial}");
        assert!(log.entries.len() >= 2);
        assert!(log.final_entry().unwrap().validation_rmse.is_some());
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let spec = NetworkSpec {
            input_dim: 3,
            hidden_layers: 3,
            hidden_width: 6,
            activation: Activation::Maxout { pieces: 2 },
            residual_period: 2,
            batchnorm: true,
            output_dim: 1,
        };
        let (x, y) = linear_data(3, 100);
        let config = TrainConfig {
            max_iterations: 500,
            ..TrainConfig::desk(11)
        };
        let (a, log_a) = train_network(&spec, &config, &x, &y, None).unwrap();
        let (b, log_b) = train_network(&spec, &config, &x, &y, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        let other = TrainConfig { seed: 12, ..config };
        let (c, _) = train_network(&spec, &other, &x, &y, None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn exploding_loss_aborts_with_iteration() {
        let spec = NetworkSpec {
            input_dim: 3,
            hidden_layers: 2,
            hidden_width: 6,
            activation: Activation::Maxout { pieces: 2 },
            residual_period: 2,
            batchnorm: false,
            output_dim: 1,
        };
        let (x, mut y) = linear_data(4, 64);
        y *= 1e120;
        let config = TrainConfig {
            base_lr: 1e140,
            max_iterations: 50,
            ..TrainConfig::desk(0)
        };
        match train_network(&spec, &config, &x, &y, None) {
            Err(Error::NonFinite { .. }) => {}
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn short_trailing_batches_are_handled() {
        // 65 rows with batch 64 leaves a 1-row tail each epoch; training must
        // still advance and stay deterministic.
        let spec = NetworkSpec::shallow(3, 4);
        let (x, y) = linear_data(5, 65);
        let config = TrainConfig {
            max_iterations: 30,
            ..TrainConfig::desk(2)
        };
        let (a, _) = train_network(&spec, &config, &x, &y, None).unwrap();
        let (b, _) = train_network(&spec, &config, &x, &y, None).unwrap();
        assert_eq!(a, b);
    }
}
