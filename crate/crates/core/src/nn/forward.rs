//! Forward pass with per-unit argmax and batch-norm intermediates cached for
//! the backward pass.

use ndarray::{Array1, Array2, Axis, Zip};

use super::{Activation, NetworkParams, NetworkSpec, BN_EPS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Batch-norm intermediates for one layer.
#[derive(Debug, Clone)]
pub(crate) struct BnSite {
    /// (pieces, out) mean used for normalization (batch mean in TRAIN,
    /// running mean in INFER).
    pub(crate) mean: Array2<f64>,
    /// (pieces, out) 1 / sqrt(var + eps).
    pub(crate) istd: Array2<f64>,
    /// Population batch variance, TRAIN mode only, for running-stat updates.
    pub(crate) batch_var: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    /// Post-skip, pre-batch-norm affine output per piece, (batch, out).
    pub(crate) z: Vec<Array2<f64>>,
    pub(crate) bn: Option<BnSite>,
    /// Winning piece per unit (always 0 for tanh/linear).
    pub(crate) argmax: Array2<u8>,
    /// Activation output, (batch, out).
    pub(crate) act: Array2<f64>,
}

/// Everything the backward pass (and guided backpropagation) needs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) mode: Mode,
    pub(crate) input: Array2<f64>,
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) predictions: Array1<f64>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn predictions(&self) -> &Array1<f64> {
        &self.predictions
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    /// Activation output of 1-based hidden layer `l`; `l = 0` is the input.
    pub(crate) fn activation(&self, l: usize) -> &Array2<f64> {
        if l == 0 {
            &self.input
        } else {
            &self.layers[l - 1].act
        }
    }

    /// Activations of the last hidden layer (the input itself when there are
    /// no hidden layers).
    pub fn last_hidden_activations(&self) -> &Array2<f64> {
        self.activation(self.layers.len())
    }

    /// Per-layer TRAIN-mode batch statistics (mean, population variance) for
    /// running-stat updates; None for layers without batch norm or in INFER.
    pub(crate) fn batch_stats(
        &self,
    ) -> impl Iterator<Item = Option<(&Array2<f64>, &Array2<f64>)>> {
        self.layers.iter().map(|l| {
            l.bn.as_ref()
                .and_then(|site| site.batch_var.as_ref().map(|v| (&site.mean, v)))
        })
    }
}

fn check_finite(values: &Array2<f64>, context: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: context.to_string(),
            iteration: 0,
        });
    }
    Ok(())
}

fn bn_normalize(
    z: &[Array2<f64>],
    mean: &Array2<f64>,
    istd: &Array2<f64>,
    gamma: &Array2<f64>,
    beta: &Array2<f64>,
) -> Vec<Array2<f64>> {
    z.iter()
        .enumerate()
        .map(|(i, zi)| {
            let mut y = zi - &mean.row(i);
            y *= &istd.row(i);
            y *= &gamma.row(i);
            y += &beta.row(i);
            y
        })
        .collect()
}

/// Run the network on a batch. TRAIN mode normalizes with batch statistics
/// and requires at least 2 rows; INFER uses running statistics and is
/// row-independent.
pub fn forward(
    params: &NetworkParams,
    spec: &NetworkSpec,
    batch: &Array2<f64>,
    mode: Mode,
) -> Result<ForwardCache> {
    spec.validate()?;
    if batch.ncols() != spec.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch width {} != input_dim {}",
            batch.ncols(),
            spec.input_dim
        )));
    }
    if params.hidden.len() != spec.hidden_layers {
        return Err(Error::ShapeMismatch(format!(
            "params have {} hidden layers, spec {}",
            params.hidden.len(),
            spec.hidden_layers
        )));
    }
    if mode == Mode::Train && batch.nrows() < 2 {
        return Err(Error::InvalidData(
            "TRAIN-mode batch needs >= 2 rows (batch statistics need variance)".into(),
        ));
    }

    let k = spec.pieces();
    let width = spec.hidden_width;
    let m = batch.nrows();
    let mut layers: Vec<LayerCache> = Vec::with_capacity(spec.hidden_layers);

    for l in 1..=spec.hidden_layers {
        let layer = &params.hidden[l - 1];
        let mut z: Vec<Array2<f64>> = {
            let x = if l == 1 { batch } else { &layers[l - 2].act };
            (0..k)
                .map(|i| {
                    let mut zi = x.dot(&layer.dense.w[i].t());
                    zi += &layer.dense.b.row(i);
                    zi
                })
                .collect()
        };
        if let Some(s) = spec.skip_source(l) {
            let src = &layers[s - 1].act;
            for zi in z.iter_mut() {
                *zi += src;
            }
        }

        let (bn_site, pre) = if spec.bn_at(l) {
            let bn = layer.bn.as_ref().ok_or_else(|| {
                Error::ShapeMismatch(format!("hidden layer {l} missing batch-norm parameters"))
            })?;
            let (mean, istd, batch_var) = match mode {
                Mode::Train => {
                    let mut mean = Array2::<f64>::zeros((k, width));
                    let mut var = Array2::<f64>::zeros((k, width));
                    for (i, zi) in z.iter().enumerate() {
                        let mu = zi.mean_axis(Axis(0)).expect("batch >= 2");
                        let centered = zi - &mu;
                        let v = centered
                            .mapv(|c| c * c)
                            .mean_axis(Axis(0))
                            .expect("batch >= 2");
                        mean.row_mut(i).assign(&mu);
                        var.row_mut(i).assign(&v);
                    }
                    let istd = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    (mean, istd, Some(var))
                }
                Mode::Infer => {
                    let istd = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    (bn.running_mean.clone(), istd, None)
                }
            };
            let pre = bn_normalize(&z, &mean, &istd, &bn.gamma, &bn.beta);
            (
                Some(BnSite {
                    mean,
                    istd,
                    batch_var,
                }),
                pre,
            )
        } else {
            (None, z.clone())
        };

        let (act, argmax) = match spec.activation {
            Activation::Maxout { .. } => {
                let mut act = pre[0].clone();
                let mut argmax = Array2::<u8>::zeros((m, width));
                for (i, pi) in pre.iter().enumerate().skip(1) {
                    Zip::from(&mut act)
                        .and(&mut argmax)
                        .and(pi)
                        .for_each(|a, am, &p| {
                            if p > *a {
                                *a = p;
                                *am = i as u8;
                            }
                        });
                }
                (act, argmax)
            }
            Activation::Tanh => (pre[0].mapv(f64::tanh), Array2::zeros((m, width))),
            Activation::Linear => (pre[0].clone(), Array2::zeros((m, width))),
        };
        check_finite(&act, &format!("hidden layer {l} activations"))?;

        layers.push(LayerCache {
            z,
            bn: bn_site,
            argmax,
            act,
        });
    }

    let last = if spec.hidden_layers == 0 {
        batch
    } else {
        &layers[spec.hidden_layers - 1].act
    };
    let mut out = last.dot(&params.output.w[0].t());
    out += &params.output.b.row(0);
    check_finite(&out, "output layer")?;
    let predictions = out.column(0).to_owned();

    Ok(ForwardCache {
        mode,
        input: batch.clone(),
        layers,
        predictions,
    })
}

/// INFER-mode predictions; row-independent.
pub fn predict(
    params: &NetworkParams,
    spec: &NetworkSpec,
    design: &Array2<f64>,
) -> Result<Array1<f64>> {
    let cache = forward(params, spec, design, Mode::Infer)?;
    Ok(cache.predictions)
}

/// Mean squared error plus `l2 * sum(hidden weights^2)` and
/// `l1 * sum(|first-layer weights|)`. Biases, gamma, and beta are unpenalized.
pub fn compute_loss(
    predictions: &Array1<f64>,
    targets: &Array1<f64>,
    params: &NetworkParams,
    l1_lambda: f64,
    l2_lambda: f64,
) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidData("empty prediction batch".into()));
    }
    let m = predictions.len() as f64;
    let mut loss = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / m;
    if l2_lambda > 0.0 {
        loss += l2_lambda
            * params
                .hidden
                .iter()
                .flat_map(|layer| layer.dense.w.iter())
                .map(|w| w.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>();
    }
    if l1_lambda > 0.0 {
        if let Some(first) = params.hidden.first() {
            loss += l1_lambda
                * first
                    .dense
                    .w
                    .iter()
                    .map(|w| w.iter().map(|v| v.abs()).sum::<f64>())
                    .sum::<f64>();
        }
    }
    Ok(loss)
}
