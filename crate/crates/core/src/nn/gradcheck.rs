//! Central finite-difference verification of the analytic gradients.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward::backward;
use super::forward::{compute_loss, forward, Mode};
use super::{xavier_init, NetworkParams, NetworkSpec};
use crate::derive_seed;
use crate::error::{Error, Result};

/// Worst relative error per parameter tensor, plus the overall worst.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<(String, f64)>,
    pub max_relative_error: f64,
}

fn loss_of(
    params: &NetworkParams,
    spec: &NetworkSpec,
    batch: &Array2<f64>,
    targets: &Array1<f64>,
    l1: f64,
    l2: f64,
) -> Result<f64> {
    let cache = forward(params, spec, batch, Mode::Train)?;
    compute_loss(cache.predictions(), targets, params, l1, l2)
}

/// Compare analytic gradients against central finite differences on one
/// batch, returning per-tensor and global worst relative errors.
///
/// The relative error floors its denominator at 1e-4: biases feeding batch
/// norm have exactly-zero gradients (the shift cancels in the batch mean),
/// and there the finite difference carries ~1e-10 cancellation noise that a
/// raw relative error would misread as failure. Agreement on such entries is
/// still enforced to 1e-8 absolute at the 1e-4 tolerance.
pub(crate) fn finite_diff_check(
    spec: &NetworkSpec,
    params: &mut NetworkParams,
    batch: &Array2<f64>,
    targets: &Array1<f64>,
    l1: f64,
    l2: f64,
    h: f64,
) -> Result<(Vec<(String, f64)>, f64)> {
    let cache = forward(params, spec, batch, Mode::Train)?;
    let grads = backward(&cache, targets, params, spec, l1, l2)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .slices()
        .into_iter()
        .map(|(name, s)| (name, s.to_vec()))
        .collect();

    let mut report = Vec::with_capacity(analytic.len());
    let mut global_max: f64 = 0.0;
    for (t, (name, tensor)) in analytic.iter().enumerate() {
        let mut tensor_max: f64 = 0.0;
        for j in 0..tensor.len() {
            let orig = {
                let mut slices = params.param_slices_mut();
                let orig = slices[t].1[j];
                slices[t].1[j] = orig + h;
                orig
            };
            let loss_plus = loss_of(params, spec, batch, targets, l1, l2)?;
            {
                let mut slices = params.param_slices_mut();
                slices[t].1[j] = orig - h;
            }
            let loss_minus = loss_of(params, spec, batch, targets, l1, l2)?;
            {
                let mut slices = params.param_slices_mut();
                slices[t].1[j] = orig;
            }
            let fd = (loss_plus - loss_minus) / (2.0 * h);
            let a = tensor[j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
            tensor_max = tensor_max.max(rel);
        }
        report.push((name.clone(), tensor_max));
        global_max = global_max.max(tensor_max);
    }
    Ok((report, global_max))
}

/// Gradient check on a seeded random batch for a small spec (at most 6 hidden
/// layers of width 8). Uses `l2 = 1e-3` and `l1 = 0`; the L1 term is verified
/// separately away from its kink.
pub fn gradient_check(spec: &NetworkSpec, seed: u64, h: f64) -> Result<GradCheckReport> {
    spec.validate()?;
    if spec.hidden_layers > 6 || spec.hidden_width > 8 {
        return Err(Error::InvalidConfig(
            "gradient_check is limited to <= 6 hidden layers of width <= 8".into(),
        ));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidConfig("step h must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gradcheck"));
    let m = 5;
    let batch = Array2::from_shape_fn((m, spec.input_dim), |_| rng.random_range(-1.0..1.0));
    let targets = Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0));
    let mut params = xavier_init(spec, derive_seed(seed, "gradcheck-init"))?;

    let (tensors, max_relative_error) =
        finite_diff_check(spec, &mut params, &batch, &targets, 0.0, 1e-3, h)?;
    Ok(GradCheckReport {
        tensors,
        max_relative_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn two_layer_maxout_net_passes() {
        let spec = NetworkSpec {
            input_dim: 4,
            hidden_layers: 2,
            hidden_width: 5,
            activation: Activation::Maxout { pieces: 2 },
            residual_period: 2,
            batchnorm: true,
            output_dim: 1,
        };
        let report = gradient_check(&spec, 1, 1e-5).unwrap();
        assert!(
            report.max_relative_error < 1e-4,
            "max rel {}",
            report.max_relative_error
        );
    }

    #[test]
    fn linear_nets_pass_at_tight_tolerance() {
        for (layers, bn) in [(0usize, false), (3, false)] {
            let spec = NetworkSpec {
                input_dim: 4,
                hidden_layers: layers,
                hidden_width: 5,
                activation: Activation::Linear,
                residual_period: 2,
                batchnorm: bn,
                output_dim: 1,
            };
            let report = gradient_check(&spec, 2, 1e-5).unwrap();
            assert!(
                report.max_relative_error < 1e-7,
                "{layers} layers: max rel {}",
                report.max_relative_error
            );
        }
    }

    #[test]
    fn report_enumerates_every_tensor_exactly_once() {
        let spec = NetworkSpec {
            input_dim: 3,
            hidden_layers: 4,
            hidden_width: 4,
            activation: Activation::Maxout { pieces: 2 },
            residual_period: 2,
            batchnorm: true,
            output_dim: 1,
        };
        let report = gradient_check(&spec, 3, 1e-5).unwrap();
        // 4 hidden layers: 2 weight pieces + bias; bn gamma/beta on layers
        // 2..4; output weights + bias.
        let expected = 4 * 3 + 3 * 2 + 2;
        assert_eq!(report.tensors.len(), expected);
        let mut names: Vec<&String> = report.tensors.iter().map(|(n, _)| n).collect();
        names.dedup();
        assert_eq!(names.len(), expected);
    }

    #[test]
    fn oversized_specs_are_rejected() {
        let spec = NetworkSpec::paper(10);
        assert!(gradient_check(&spec, 0, 1e-5).is_err());
    }
}
