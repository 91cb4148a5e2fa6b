//! Exact backpropagation through the loss, output layer, batch norm (batch
//! statistics chain rule), maxout argmax routing, and residual skips.

use ndarray::{Array1, Array2, Axis};

use super::forward::{ForwardCache, Mode};
use super::{Activation, NetworkParams, NetworkSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Vec<Array2<f64>>,
    pub b: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrad {
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenGrad {
    pub dense: DenseGrad,
    pub bn: Option<BnGrad>,
}

/// Gradients of `compute_loss` with respect to every learnable parameter,
/// shaped like `NetworkParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<HiddenGrad>,
    pub output: DenseGrad,
}

impl Gradients {
    /// Flat views in the same order as `NetworkParams::param_slices_mut`.
    pub fn slices(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.hidden.iter().enumerate() {
            for (i, w) in layer.dense.w.iter().enumerate() {
                out.push((
                    format!("hidden{}.w{i}", l + 1),
                    w.as_slice().expect("standard layout"),
                ));
            }
            out.push((
                format!("hidden{}.b", l + 1),
                layer.dense.b.as_slice().expect("standard layout"),
            ));
            if let Some(bn) = &layer.bn {
                out.push((
                    format!("hidden{}.bn.gamma", l + 1),
                    bn.gamma.as_slice().expect("standard layout"),
                ));
                out.push((
                    format!("hidden{}.bn.beta", l + 1),
                    bn.beta.as_slice().expect("standard layout"),
                ));
            }
        }
        for (i, w) in self.output.w.iter().enumerate() {
            out.push((
                format!("output.w{i}"),
                w.as_slice().expect("standard layout"),
            ));
        }
        out.push((
            "output.b".to_string(),
            self.output.b.as_slice().expect("standard layout"),
        ));
        out
    }
}

/// Exact gradients of the regularized MSE from a TRAIN-mode forward cache.
///
/// Maxout routes gradient only through the recorded argmax piece; batch norm
/// backpropagates through its batch statistics; residual skips add gradient
/// at both endpoints; the L1 subgradient at exactly 0 is 0.
pub fn backward(
    cache: &ForwardCache,
    targets: &Array1<f64>,
    params: &NetworkParams,
    spec: &NetworkSpec,
    l1_lambda: f64,
    l2_lambda: f64,
) -> Result<Gradients> {
    if cache.mode() != Mode::Train {
        return Err(Error::InvalidData(
            "backward requires a TRAIN-mode forward cache".into(),
        ));
    }
    let m = cache.batch_size();
    if targets.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "stale cache: {} targets for a batch of {m}",
            targets.len()
        )));
    }
    if params.hidden.len() != spec.hidden_layers || cache.layers.len() != spec.hidden_layers {
        return Err(Error::ShapeMismatch("cache/params disagree with spec".into()));
    }
    let k = spec.pieces();
    let scale = 2.0 / m as f64;

    // dL/dprediction as a column for the output affine backward.
    let d_pred = {
        let mut d = Array2::<f64>::zeros((m, 1));
        for (i, (p, t)) in cache.predictions().iter().zip(targets).enumerate() {
            d[[i, 0]] = scale * (p - t);
        }
        d
    };

    let last_act = cache.activation(spec.hidden_layers);
    let output = DenseGrad {
        w: vec![d_pred.t().dot(last_act)],
        b: {
            let mut b = Array2::zeros((1, 1));
            b[[0, 0]] = d_pred.sum();
            b
        },
    };

    // Pending gradient at each hidden layer's activation output.
    let mut pending: Vec<Option<Array2<f64>>> = vec![None; spec.hidden_layers + 1];
    if spec.hidden_layers > 0 {
        pending[spec.hidden_layers] = Some(d_pred.dot(&params.output.w[0]));
    }

    let add_into = |slot: &mut Option<Array2<f64>>, value: Array2<f64>| match slot {
        Some(existing) => *existing += &value,
        None => *slot = Some(value),
    };

    let mut hidden_grads: Vec<Option<HiddenGrad>> = vec![None; spec.hidden_layers];

    for l in (1..=spec.hidden_layers).rev() {
        let g = pending[l]
            .take()
            .expect("every layer receives gradient from above");
        let layer_cache = &cache.layers[l - 1];
        let layer = &params.hidden[l - 1];

        // Activation backward: gradient at the pre-activation values.
        let d_pre: Vec<Array2<f64>> = match spec.activation {
            Activation::Maxout { .. } => {
                let mut d: Vec<Array2<f64>> =
                    (0..k).map(|_| Array2::zeros(g.raw_dim())).collect();
                for ((idx, &gv), &am) in g.indexed_iter().zip(layer_cache.argmax.iter()) {
                    d[am as usize][idx] = gv;
                }
                d
            }
            Activation::Tanh => {
                vec![&g * &layer_cache.act.mapv(|a| 1.0 - a * a)]
            }
            Activation::Linear => vec![g.clone()],
        };

        // Batch-norm backward (batch-statistics chain rule), else identity.
        let (d_u, bn_grad): (Vec<Array2<f64>>, Option<BnGrad>) = match &layer_cache.bn {
            Some(site) => {
                let bn = layer.bn.as_ref().expect("cache and params agree");
                let mut gamma_g = Array2::<f64>::zeros(bn.gamma.raw_dim());
                let mut beta_g = Array2::<f64>::zeros(bn.beta.raw_dim());
                let mut d_u = Vec::with_capacity(k);
                for (i, dp) in d_pre.iter().enumerate() {
                    let mut xhat = &layer_cache.z[i] - &site.mean.row(i);
                    xhat *= &site.istd.row(i);
                    gamma_g
                        .row_mut(i)
                        .assign(&(dp * &xhat).sum_axis(Axis(0)));
                    beta_g.row_mut(i).assign(&dp.sum_axis(Axis(0)));
                    let dxhat = dp * &bn.gamma.row(i);
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * &xhat).sum_axis(Axis(0));
                    let mf = m as f64;
                    let mut du = &dxhat * mf;
                    du -= &sum_dxhat;
                    du -= &(&xhat * &sum_dxhat_xhat);
                    du *= &site.istd.row(i);
                    du /= mf;
                    d_u.push(du);
                }
                (d_u, Some(BnGrad { gamma: gamma_g, beta: beta_g }))
            }
            None => (d_pre, None),
        };

        // Affine backward plus the regularization terms.
        let x = cache.activation(l - 1);
        let mut w_g = Vec::with_capacity(k);
        let mut b_g = Array2::<f64>::zeros(layer.dense.b.raw_dim());
        let mut d_x = Array2::<f64>::zeros((m, x.ncols()));
        for (i, du) in d_u.iter().enumerate() {
            let mut wg = du.t().dot(x);
            if l2_lambda > 0.0 {
                wg.zip_mut_with(&layer.dense.w[i], |g, &w| *g += 2.0 * l2_lambda * w);
            }
            if l == 1 && l1_lambda > 0.0 {
                wg.zip_mut_with(&layer.dense.w[i], |g, &w| *g += l1_lambda * w.signum());
            }
            w_g.push(wg);
            b_g.row_mut(i).assign(&du.sum_axis(Axis(0)));
            d_x += &du.dot(&layer.dense.w[i]);
        }

        // Residual skip: the block input received each piece's pre-BN gradient.
        if let Some(s) = spec.skip_source(l) {
            let mut skip = Array2::<f64>::zeros(g.raw_dim());
            for du in &d_u {
                skip += du;
            }
            add_into(&mut pending[s], skip);
        }
        if l > 1 {
            add_into(&mut pending[l - 1], d_x);
        }

        hidden_grads[l - 1] = Some(HiddenGrad {
            dense: DenseGrad { w: w_g, b: b_g },
            bn: bn_grad,
        });
    }

    Ok(Gradients {
        hidden: hidden_grads
            .into_iter()
            .map(|g| g.expect("all layers visited"))
            .collect(),
        output,
    })
}
