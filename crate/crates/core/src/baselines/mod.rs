//! Comparison models: Lasso, shallow neural network, regression tree, and
//! the training-mean baseline, each fitted separately to yield and check
//! yield with the difference of outputs as the yield-difference prediction.

pub mod lasso;
pub mod tree;

pub use lasso::{fit_lasso, lambda_max, LassoModel};
pub use tree::{fit_regression_tree, TreeModel, TreeParams};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::FieldTrialDataset;
use crate::error::{Error, Result};
use crate::nn::{predict, train_network, NetworkParams, NetworkSpec, TrainConfig};
use crate::preprocess::{assemble_design, PreprocessFit, PreprocessOptions};
use crate::yield_model::{TargetStats, Triplets};

pub const DEFAULT_LASSO_LAMBDA: f64 = 0.2;
pub const DEFAULT_SNN_WIDTH: usize = 300;

/// Single-hidden-layer network baseline with target standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowNetModel {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub stats: TargetStats,
}

/// Train the shallow-net baseline (one tanh hidden layer).
pub fn fit_shallow_net(
    design: &Array2<f64>,
    targets: &Array1<f64>,
    hidden_width: usize,
    config: &TrainConfig,
) -> Result<ShallowNetModel> {
    let spec = NetworkSpec::shallow(design.ncols(), hidden_width);
    let stats = TargetStats::fit(targets);
    let standardized = stats.standardize(targets);
    let (params, _) = train_network(&spec, config, design, &standardized, None)?;
    Ok(ShallowNetModel {
        spec,
        params,
        stats,
    })
}

/// Constant predictor at the training-target mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageModel {
    pub mean: f64,
}

/// Row-independent prediction over a design matrix.
pub trait PredictRows {
    fn predict_rows(&self, design: &Array2<f64>) -> Result<Array1<f64>>;
}

impl PredictRows for LassoModel {
    fn predict_rows(&self, design: &Array2<f64>) -> Result<Array1<f64>> {
        self.predict(design)
    }
}

impl PredictRows for TreeModel {
    fn predict_rows(&self, design: &Array2<f64>) -> Result<Array1<f64>> {
        self.predict(design)
    }
}

impl PredictRows for ShallowNetModel {
    fn predict_rows(&self, design: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.stats.restore(&predict(&self.params, &self.spec, design)?))
    }
}

impl PredictRows for AverageModel {
    fn predict_rows(&self, design: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(Array1::from_elem(design.nrows(), self.mean))
    }
}

/// One baseline fitted twice (yield and check yield) over a shared
/// preprocessing fit, mirroring the dual network scheme.
#[derive(Debug, Clone)]
pub struct DualBaseline<M: PredictRows> {
    pub name: String,
    pub fit: PreprocessFit,
    pub yield_model: M,
    pub check_model: M,
}

impl<M: PredictRows> DualBaseline<M> {
    /// Predict yield, check yield, and their exact difference for a dataset.
    pub fn predict_triplets(&self, dataset: &FieldTrialDataset) -> Result<Triplets> {
        let design = assemble_design(dataset, Some(&self.fit), &PreprocessOptions::default())?;
        let yield_pred = self.yield_model.predict_rows(&design.design)?;
        let check_pred = self.check_model.predict_rows(&design.design)?;
        let diff_pred = &yield_pred - &check_pred;
        Ok(Triplets {
            yield_pred,
            check_pred,
            diff_pred,
        })
    }
}

/// Settings for the Lasso dual fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoSettings {
    pub lambda: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for LassoSettings {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LASSO_LAMBDA,
            tolerance: 1e-7,
            max_sweeps: 2000,
        }
    }
}

/// Fit the dual Lasso baseline on a training split.
pub fn fit_dual_lasso(
    train: &FieldTrialDataset,
    settings: &LassoSettings,
    options: &PreprocessOptions,
    fit: Option<&PreprocessFit>,
) -> Result<DualBaseline<LassoModel>> {
    let outcome = assemble_design(train, fit, options)?;
    let yield_model = fit_lasso(
        &outcome.design,
        &train.yields(),
        settings.lambda,
        settings.tolerance,
        settings.max_sweeps,
    )?;
    let check_model = fit_lasso(
        &outcome.design,
        &train.check_yields(),
        settings.lambda,
        settings.tolerance,
        settings.max_sweeps,
    )?;
    Ok(DualBaseline {
        name: "Lasso".into(),
        fit: outcome.fit,
        yield_model,
        check_model,
    })
}

/// Fit the dual regression-tree baseline on a training split.
pub fn fit_dual_tree(
    train: &FieldTrialDataset,
    params: &TreeParams,
    options: &PreprocessOptions,
    fit: Option<&PreprocessFit>,
) -> Result<DualBaseline<TreeModel>> {
    let outcome = assemble_design(train, fit, options)?;
    let yield_model = fit_regression_tree(&outcome.design, &train.yields(), params)?;
    let check_model = fit_regression_tree(&outcome.design, &train.check_yields(), params)?;
    Ok(DualBaseline {
        name: "RT".into(),
        fit: outcome.fit,
        yield_model,
        check_model,
    })
}

/// Fit the dual shallow-net baseline on a training split. The two networks
/// use independent seeds derived from the config seed.
pub fn fit_dual_shallow_net(
    train: &FieldTrialDataset,
    hidden_width: usize,
    config: &TrainConfig,
    options: &PreprocessOptions,
    fit: Option<&PreprocessFit>,
) -> Result<DualBaseline<ShallowNetModel>> {
    let outcome = assemble_design(train, fit, options)?;
    let yield_config = TrainConfig {
        seed: crate::derive_seed(config.seed, "snn-yield"),
        ..*config
    };
    let check_config = TrainConfig {
        seed: crate::derive_seed(config.seed, "snn-check"),
        ..*config
    };
    let yield_model = fit_shallow_net(&outcome.design, &train.yields(), hidden_width, &yield_config)?;
    let check_model =
        fit_shallow_net(&outcome.design, &train.check_yields(), hidden_width, &check_config)?;
    Ok(DualBaseline {
        name: "SNN".into(),
        fit: outcome.fit,
        yield_model,
        check_model,
    })
}

/// Fit the dual training-mean baseline.
pub fn fit_dual_average(
    train: &FieldTrialDataset,
    options: &PreprocessOptions,
    fit: Option<&PreprocessFit>,
) -> Result<DualBaseline<AverageModel>> {
    let outcome = assemble_design(train, fit, options)?;
    let n = train.n() as f64;
    Ok(DualBaseline {
        name: "Average".into(),
        fit: outcome.fit,
        yield_model: AverageModel {
            mean: train.yields().sum() / n,
        },
        check_model: AverageModel {
            mean: train.check_yields().sum() / n,
        },
    })
}

/// Serializable container for one fitted baseline model.
#[derive(Debug, Serialize, Deserialize)]
pub enum BaselineCheckpoint {
    Lasso(LassoModel),
    Tree(TreeModel),
    ShallowNet(ShallowNetModel),
    Average(AverageModel),
}

impl BaselineCheckpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(&path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(&path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))
    }
}
