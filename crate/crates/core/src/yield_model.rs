//! Dual-network yield modeling: one deep network for yield, one for check
//! yield, with their difference as the yield-difference prediction; plus the
//! single-source ablations (genotype / soil / weather / average).
//!
//! Targets are standardized per network with training statistics (undone at
//! prediction time) so the fixed small learning rate can reach yield-scale
//! outputs within the desk iteration budget. The two networks train with
//! independent seeds derived from one master seed.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::FieldTrialDataset;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::evaluate::{metrics_row, MetricsRow, Response};
use crate::nn::{
    predict, train_network, Checkpoint, NetworkParams, NetworkSpec, TrainConfig, TrainLog,
};
use crate::preprocess::{assemble_design, PreprocessFit, PreprocessOptions};
use crate::synth::FeatureGroup;

const PAIR_VERSION: u32 = 1;

/// Training-target standardization, undone at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub scale: f64,
}

impl TargetStats {
    pub fn fit(targets: &Array1<f64>) -> Self {
        let n = targets.len() as f64;
        let mean = targets.sum() / n;
        let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        Self {
            mean,
            scale: if sd > 0.0 { sd } else { 1.0 },
        }
    }

    pub fn standardize(&self, values: &Array1<f64>) -> Array1<f64> {
        values.mapv(|v| (v - self.mean) / self.scale)
    }

    pub fn restore(&self, values: &Array1<f64>) -> Array1<f64> {
        values.mapv(|v| v * self.scale + self.mean)
    }
}

/// Per-row predictions for the three response variables;
/// `diff` is exactly `yield - check`.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplets {
    pub yield_pred: Array1<f64>,
    pub check_pred: Array1<f64>,
    pub diff_pred: Array1<f64>,
}

/// The trained pair plus the shared preprocessing fit.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldModelPair {
    pub spec: NetworkSpec,
    pub config: TrainConfig,
    pub fit: PreprocessFit,
    pub yield_net: NetworkParams,
    pub check_net: NetworkParams,
    pub yield_stats: TargetStats,
    pub check_stats: TargetStats,
    pub yield_log: TrainLog,
    pub check_log: TrainLog,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairMeta {
    version: u32,
    master_seed: u64,
    yield_stats: TargetStats,
    check_stats: TargetStats,
    config_hash: u64,
    yield_log: TrainLog,
    check_log: TrainLog,
}

fn config_hash(spec: &NetworkSpec, config: &TrainConfig) -> u64 {
    let blob = serde_json::to_string(&(spec, config)).unwrap_or_default();
    derive_seed(0, &blob)
}

impl YieldModelPair {
    /// Write the artifact container: preprocessing fit, both checkpoints, and
    /// a manifest with target statistics and a config hash.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(&dir.display().to_string(), e))?;
        self.fit.save(&dir.join("preprocess_fit.json"))?;
        Checkpoint::new(self.spec, self.config, self.yield_net.clone())
            .save(&dir.join("yield_checkpoint.json"))?;
        Checkpoint::new(self.spec, self.config, self.check_net.clone())
            .save(&dir.join("check_yield_checkpoint.json"))?;
        let meta = PairMeta {
            version: PAIR_VERSION,
            master_seed: self.config.seed,
            yield_stats: self.yield_stats,
            check_stats: self.check_stats,
            config_hash: config_hash(&self.spec, &self.config),
            yield_log: self.yield_log.clone(),
            check_log: self.check_log.clone(),
        };
        let json =
            serde_json::to_string_pretty(&meta).map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(dir.join("pair.json"), json)
            .map_err(|e| Error::io(&dir.display().to_string(), e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let fit = PreprocessFit::load(&dir.join("preprocess_fit.json"))?;
        let yield_ckpt = Checkpoint::load(&dir.join("yield_checkpoint.json"))?;
        let check_ckpt = Checkpoint::load(&dir.join("check_yield_checkpoint.json"))?;
        let meta_path = dir.join("pair.json");
        let text = std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::io(&meta_path.display().to_string(), e))?;
        let meta: PairMeta =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        if meta.version != PAIR_VERSION {
            return Err(Error::Serialization(format!(
                "pair version {} unsupported (expected {PAIR_VERSION})",
                meta.version
            )));
        }
        if yield_ckpt.spec != check_ckpt.spec {
            return Err(Error::InvalidData(
                "yield and check-yield checkpoints disagree on the architecture".into(),
            ));
        }
        Ok(Self {
            spec: yield_ckpt.spec,
            config: TrainConfig {
                seed: meta.master_seed,
                ..yield_ckpt.config
            },
            fit,
            yield_net: yield_ckpt.params,
            check_net: check_ckpt.params,
            yield_stats: meta.yield_stats,
            check_stats: meta.check_stats,
            yield_log: meta.yield_log,
            check_log: meta.check_log,
        })
    }
}

fn train_one(
    spec: &NetworkSpec,
    config: &TrainConfig,
    design: &Array2<f64>,
    targets: &Array1<f64>,
    stream: &str,
) -> Result<(NetworkParams, TargetStats, TrainLog)> {
    let stats = TargetStats::fit(targets);
    let standardized = stats.standardize(targets);
    let net_config = TrainConfig {
        seed: derive_seed(config.seed, stream),
        ..*config
    };
    let (params, log) = train_network(spec, &net_config, design, &standardized, None)?;
    Ok((params, stats, log))
}

/// Train the yield and check-yield networks on the same design matrix with
/// independent derived seeds. Pass a fit to reuse preprocessing (e.g. for
/// subset retraining); otherwise it is fitted on this training split.
pub fn train_pair(
    train: &FieldTrialDataset,
    spec_template: &NetworkSpec,
    config: &TrainConfig,
    options: &PreprocessOptions,
    fit: Option<&PreprocessFit>,
) -> Result<YieldModelPair> {
    let outcome = assemble_design(train, fit, options)?;
    let spec = NetworkSpec {
        input_dim: outcome.fit.n_features(),
        ..*spec_template
    };
    spec.validate()?;

    let yields = train.yields();
    let checks = train.check_yields();
    let (yield_net, yield_stats, yield_log) =
        train_one(&spec, config, &outcome.design, &yields, "yield")?;
    let (check_net, check_stats, check_log) =
        train_one(&spec, config, &outcome.design, &checks, "check_yield")?;

    Ok(YieldModelPair {
        spec,
        config: *config,
        fit: outcome.fit,
        yield_net,
        check_net,
        yield_stats,
        check_stats,
        yield_log,
        check_log,
    })
}

/// Predict all three responses for a dataset transformable by the stored fit.
pub fn predict_triplet(pair: &YieldModelPair, dataset: &FieldTrialDataset) -> Result<Triplets> {
    let outcome = assemble_design(dataset, Some(&pair.fit), &PreprocessOptions::default())?;
    let yield_pred = pair
        .yield_stats
        .restore(&predict(&pair.yield_net, &pair.spec, &outcome.design)?);
    let check_pred = pair
        .check_stats
        .restore(&predict(&pair.check_net, &pair.spec, &outcome.design)?);
    let diff_pred = &yield_pred - &check_pred;
    Ok(Triplets {
        yield_pred,
        check_pred,
        diff_pred,
    })
}

/// Metrics rows for the three responses against a dataset's ground truth.
pub fn triplet_metrics(
    model: &str,
    train_triplets: &Triplets,
    train: &FieldTrialDataset,
    val_triplets: &Triplets,
    validation: &FieldTrialDataset,
) -> Result<Vec<MetricsRow>> {
    let rows = vec![
        metrics_row(
            model,
            Response::Yield,
            train_triplets.yield_pred.as_slice().expect("contiguous"),
            train.yields().as_slice().expect("contiguous"),
            val_triplets.yield_pred.as_slice().expect("contiguous"),
            validation.yields().as_slice().expect("contiguous"),
        )?,
        metrics_row(
            model,
            Response::CheckYield,
            train_triplets.check_pred.as_slice().expect("contiguous"),
            train.check_yields().as_slice().expect("contiguous"),
            val_triplets.check_pred.as_slice().expect("contiguous"),
            validation.check_yields().as_slice().expect("contiguous"),
        )?,
        metrics_row(
            model,
            Response::YieldDifference,
            train_triplets.diff_pred.as_slice().expect("contiguous"),
            train.yield_differences().as_slice().expect("contiguous"),
            val_triplets.diff_pred.as_slice().expect("contiguous"),
            validation.yield_differences().as_slice().expect("contiguous"),
        )?,
    ];
    Ok(rows)
}

/// Which feature source a single-source ablation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationSource {
    Genotype,
    Soil,
    Weather,
    Average,
}

impl AblationSource {
    pub fn model_name(&self) -> &'static str {
        match self {
            AblationSource::Genotype => "DNN(G)",
            AblationSource::Soil => "DNN(S)",
            AblationSource::Weather => "DNN(W)",
            AblationSource::Average => "Average",
        }
    }
}

impl std::str::FromStr for AblationSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g" | "genotype" => Ok(AblationSource::Genotype),
            "s" | "soil" => Ok(AblationSource::Soil),
            "w" | "weather" => Ok(AblationSource::Weather),
            "average" => Ok(AblationSource::Average),
            other => Err(Error::InvalidConfig(format!(
                "unknown ablation source {other:?} (expected G, S, W, or average)"
            ))),
        }
    }
}

/// A yield network trained on one feature group only.
#[derive(Debug, Clone)]
pub struct SingleSourceModel {
    pub source: AblationSource,
    pub spec: NetworkSpec,
    pub config: TrainConfig,
    pub fit: PreprocessFit,
    pub params: NetworkParams,
    pub stats: TargetStats,
}

impl SingleSourceModel {
    pub fn predict(&self, dataset: &FieldTrialDataset) -> Result<Array1<f64>> {
        let outcome = assemble_design(dataset, Some(&self.fit), &PreprocessOptions::default())?;
        Ok(self
            .stats
            .restore(&predict(&self.params, &self.spec, &outcome.design)?))
    }
}

/// Train a yield network restricted to one feature group. The full spec is
/// reused with reduced input width; no re-tuning.
pub fn train_single_source(
    train: &FieldTrialDataset,
    source: AblationSource,
    spec_template: &NetworkSpec,
    config: &TrainConfig,
    options: &PreprocessOptions,
) -> Result<SingleSourceModel> {
    let group = match source {
        AblationSource::Genotype => FeatureGroup::Marker,
        AblationSource::Soil => FeatureGroup::Soil,
        AblationSource::Weather => FeatureGroup::Weather,
        AblationSource::Average => {
            return Err(Error::InvalidConfig(
                "the average baseline has no network to train".into(),
            ))
        }
    };
    let full = assemble_design(train, None, options)?;
    let fit = full.fit.restrict_to_group(group);
    let outcome = assemble_design(train, Some(&fit), options)?;
    let spec = NetworkSpec {
        input_dim: fit.n_features(),
        ..*spec_template
    };
    spec.validate()?;
    let (params, stats, _) = train_one(&spec, config, &outcome.design, &train.yields(), "yield")?;
    Ok(SingleSourceModel {
        source,
        spec,
        config: *config,
        fit,
        params,
        stats,
    })
}

/// Yield-prediction metrics for one single-source model (or the training-mean
/// baseline when `source` is `Average`).
pub fn ablation_single_source(
    train: &FieldTrialDataset,
    validation: &FieldTrialDataset,
    source: AblationSource,
    spec_template: &NetworkSpec,
    config: &TrainConfig,
    options: &PreprocessOptions,
) -> Result<MetricsRow> {
    let (train_pred, val_pred) = match source {
        AblationSource::Average => {
            let mean = train.yields().sum() / train.n() as f64;
            (
                Array1::from_elem(train.n(), mean),
                Array1::from_elem(validation.n(), mean),
            )
        }
        _ => {
            let model = train_single_source(train, source, spec_template, config, options)?;
            (model.predict(train)?, model.predict(validation)?)
        }
    };
    metrics_row(
        source.model_name(),
        Response::Yield,
        train_pred.as_slice().expect("contiguous"),
        train.yields().as_slice().expect("contiguous"),
        val_pred.as_slice().expect("contiguous"),
        validation.yields().as_slice().expect("contiguous"),
    )
}
