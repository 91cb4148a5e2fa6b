//! Guided backpropagation from a trained network to rank input features,
//! group-normalized effect reporting, and top-k subset selection.
//!
//! The backward pass runs in INFER mode. At every maxout activation site the
//! signal is routed through the recorded argmax piece and negative incoming
//! signal is zeroed; batch-norm sites pass the signal through their running
//! linear transform unclipped. The guided pass runs on the yield network
//! only.

use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{forward, Activation, ForwardCache, Mode, NetworkParams, NetworkSpec};
use crate::synth::FeatureGroup;

/// Per-feature saliency magnitudes with group-normalized values in [0, 1].
#[derive(Debug, Clone, Serialize)]
pub struct EffectReport {
    pub feature_names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    /// Mean absolute input-space signal over the validation rows.
    pub raw: Vec<f64>,
    /// Raw effect divided by its group maximum (0 for an all-zero group).
    pub normalized: Vec<f64>,
    /// Activated-neuron mask used to seed the backward pass.
    pub mask: Vec<bool>,
    pub activation_threshold: f64,
}

impl EffectReport {
    pub fn n_features(&self) -> usize {
        self.raw.len()
    }

    /// effects.csv: feature, group, raw, normalized.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("feature,group,raw_effect,normalized_effect\n");
        for i in 0..self.n_features() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.feature_names[i], self.groups[i], self.raw[i], self.normalized[i]
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(&path.display().to_string(), e))
    }
}

/// Mean activation per last-hidden-layer neuron over all rows (INFER mode);
/// the mask is true where the mean exceeds `threshold` (default 0.0).
pub fn activated_neuron_mask(
    params: &NetworkParams,
    spec: &NetworkSpec,
    design: &Array2<f64>,
    threshold: f64,
) -> Result<Vec<bool>> {
    if spec.hidden_layers == 0 {
        return Err(Error::InvalidConfig(
            "activation mask needs at least one hidden layer".into(),
        ));
    }
    if design.nrows() == 0 {
        return Err(Error::InvalidData("empty design".into()));
    }
    let cache = forward(params, spec, design, Mode::Infer)?;
    let acts = cache.last_hidden_activations();
    let m = acts.nrows() as f64;
    let mask: Vec<bool> = (0..acts.ncols())
        .map(|j| acts.column(j).sum() / m > threshold)
        .collect();
    if mask.iter().all(|&b| !b) {
        return Err(Error::InvalidData(
            "no neuron clears the activation threshold; lower it".into(),
        ));
    }
    Ok(mask)
}

fn guided_backward(
    cache: &ForwardCache,
    params: &NetworkParams,
    spec: &NetworkSpec,
    mask: &[bool],
) -> Result<Array2<f64>> {
    let m = cache.batch_size();
    let k = spec.pieces();
    let width = spec.hidden_width;

    let mut pending: Vec<Option<Array2<f64>>> = vec![None; spec.hidden_layers + 1];
    let seed = Array2::from_shape_fn((m, width), |(_, j)| if mask[j] { 1.0 } else { 0.0 });
    pending[spec.hidden_layers] = Some(seed);

    let add_into = |slot: &mut Option<Array2<f64>>, value: Array2<f64>| match slot {
        Some(existing) => *existing += &value,
        None => *slot = Some(value),
    };

    for l in (1..=spec.hidden_layers).rev() {
        let mut g = pending[l].take().expect("signal reaches every layer");
        let lc = &cache.layers[l - 1];
        let layer = &params.hidden[l - 1];

        // Guided rule at the maxout site: clip negative incoming signal, then
        // route through the recorded argmax piece.
        g.mapv_inplace(|v| v.max(0.0));
        let mut d: Vec<Array2<f64>> = (0..k).map(|_| Array2::zeros(g.raw_dim())).collect();
        for ((idx, &gv), &am) in g.indexed_iter().zip(lc.argmax.iter()) {
            d[am as usize][idx] = gv;
        }

        // Batch norm in INFER mode is a per-channel linear map.
        if let Some(site) = &lc.bn {
            let bn = layer.bn.as_ref().expect("cache and params agree");
            for (i, di) in d.iter_mut().enumerate() {
                *di *= &bn.gamma.row(i);
                *di *= &site.istd.row(i);
            }
        }

        let fan_in = if l == 1 { spec.input_dim } else { width };
        let mut g_prev = Array2::<f64>::zeros((m, fan_in));
        for (i, di) in d.iter().enumerate() {
            g_prev += &di.dot(&layer.dense.w[i]);
        }
        if let Some(s) = spec.skip_source(l) {
            let mut skip = Array2::<f64>::zeros(g.raw_dim());
            for di in &d {
                skip += di;
            }
            add_into(&mut pending[s], skip);
        }
        if l > 1 {
            add_into(&mut pending[l - 1], g_prev);
        } else {
            return Ok(g_prev);
        }
    }
    unreachable!("loop returns at layer 1")
}

/// Backpropagate the activated-neuron mask to the input space with the
/// guided rule and aggregate per-feature effects.
pub fn effects_via_guided_backprop(
    params: &NetworkParams,
    spec: &NetworkSpec,
    design: &Array2<f64>,
    mask: &[bool],
    feature_names: Vec<String>,
    groups: Vec<FeatureGroup>,
    activation_threshold: f64,
) -> Result<EffectReport> {
    if !matches!(spec.activation, Activation::Maxout { .. }) {
        return Err(Error::InvalidConfig(
            "guided backpropagation is defined for maxout networks".into(),
        ));
    }
    if mask.len() != spec.hidden_width {
        return Err(Error::ShapeMismatch(format!(
            "mask length {} != hidden width {}",
            mask.len(),
            spec.hidden_width
        )));
    }
    if feature_names.len() != spec.input_dim || groups.len() != spec.input_dim {
        return Err(Error::ShapeMismatch(
            "feature names/groups must cover every input column".into(),
        ));
    }
    let cache = forward(params, spec, design, Mode::Infer)?;
    let signal = guided_backward(&cache, params, spec, mask)?;

    let m = design.nrows() as f64;
    let raw: Vec<f64> = (0..spec.input_dim)
        .map(|j| signal.column(j).iter().map(|v| v.abs()).sum::<f64>() / m)
        .collect();

    let mut group_max = [0.0f64; 3];
    let gi = |g: FeatureGroup| match g {
        FeatureGroup::Marker => 0,
        FeatureGroup::Weather => 1,
        FeatureGroup::Soil => 2,
    };
    for (j, &g) in groups.iter().enumerate() {
        group_max[gi(g)] = group_max[gi(g)].max(raw[j]);
    }
    let normalized: Vec<f64> = groups
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            let mx = group_max[gi(g)];
            if mx > 0.0 {
                raw[j] / mx
            } else {
                0.0
            }
        })
        .collect();

    Ok(EffectReport {
        feature_names,
        groups,
        raw,
        normalized,
        mask: mask.to_vec(),
        activation_threshold,
    })
}

/// Select the top markers and the top environmental features (over the union
/// of soil and weather) by group-normalized effect; ties break toward the
/// lower index. Returns design-column indices, ascending.
pub fn select_top_features(
    report: &EffectReport,
    n_markers: usize,
    n_environment: usize,
) -> Result<Vec<usize>> {
    let marker_cols: Vec<usize> = (0..report.n_features())
        .filter(|&j| report.groups[j] == FeatureGroup::Marker)
        .collect();
    let env_cols: Vec<usize> = (0..report.n_features())
        .filter(|&j| report.groups[j] != FeatureGroup::Marker)
        .collect();
    if n_markers > marker_cols.len() {
        return Err(Error::InvalidConfig(format!(
            "requested {n_markers} markers but only {} exist",
            marker_cols.len()
        )));
    }
    if n_environment > env_cols.len() {
        return Err(Error::InvalidConfig(format!(
            "requested {n_environment} environmental features but only {} exist",
            env_cols.len()
        )));
    }
    let top = |cols: &[usize], count: usize| -> Vec<usize> {
        let mut sorted = cols.to_vec();
        sorted.sort_by(|&a, &b| {
            report.normalized[b]
                .partial_cmp(&report.normalized[a])
                .expect("effects are finite")
                .then(a.cmp(&b))
        });
        sorted.truncate(count);
        sorted
    };
    let mut selected = top(&marker_cols, n_markers);
    selected.extend(top(&env_cols, n_environment));
    selected.sort_unstable();
    Ok(selected)
}
