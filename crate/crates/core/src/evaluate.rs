//! Metrics (RMSE, Pearson correlation in percent), per-location error
//! breakdown, the yield-difference variance identity, distribution summaries,
//! and report assembly.
//!
//! All reported statistics use the sample (n-1) variance convention, stated
//! in the report metadata. Correlations are reported in percent; a constant
//! series yields correlation 0 with a degenerate flag.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_select::EffectReport;

/// RMSE and Pearson correlation (percent) for one prediction/target pairing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub pearson_pct: f64,
    /// Set when either series had zero variance, in which case the
    /// correlation is reported as 0 by convention.
    pub degenerate: bool,
}

/// Root-mean-square error and Pearson correlation in percent.
pub fn metrics(predictions: &[f64], targets: &[f64]) -> Result<Metrics> {
    if predictions.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidData("metrics need at least one pair".into()));
    }
    let n = predictions.len() as f64;
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let rmse = mse.sqrt();

    let p_mean = predictions.iter().sum::<f64>() / n;
    let t_mean = targets.iter().sum::<f64>() / n;
    let mut spp = 0.0;
    let mut stt = 0.0;
    let mut spt = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        let dp = p - p_mean;
        let dt = t - t_mean;
        spp += dp * dp;
        stt += dt * dt;
        spt += dp * dt;
    }
    // A series is degenerate when its spread is at rounding scale relative to
    // its magnitude (a constant vector rarely sums to an exactly-zero spread).
    let spread_floor = |sum_sq: f64, mean: f64| {
        (sum_sq / n).sqrt() <= 1e-10 * (1.0 + mean.abs())
    };
    let (pearson_pct, degenerate) = if spread_floor(spp, p_mean) || spread_floor(stt, t_mean) {
        (0.0, true)
    } else {
        (100.0 * spt / (spp.sqrt() * stt.sqrt()), false)
    };
    Ok(Metrics {
        rmse,
        pearson_pct,
        degenerate,
    })
}

/// Response variable of a metrics row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Response {
    Yield,
    CheckYield,
    YieldDifference,
}

impl std::fmt::Display for Response {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Response::Yield => f.write_str("yield"),
            Response::CheckYield => f.write_str("check_yield"),
            Response::YieldDifference => f.write_str("yield_difference"),
        }
    }
}

/// One row of the model-comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub response: Response,
    pub train_rmse: f64,
    pub train_corr_pct: f64,
    pub val_rmse: f64,
    pub val_corr_pct: f64,
    pub degenerate: bool,
}

/// Build a metrics row from train and validation prediction/target pairs.
pub fn metrics_row(
    model: &str,
    response: Response,
    train_pred: &[f64],
    train_targets: &[f64],
    val_pred: &[f64],
    val_targets: &[f64],
) -> Result<MetricsRow> {
    let train = metrics(train_pred, train_targets)?;
    let val = metrics(val_pred, val_targets)?;
    Ok(MetricsRow {
        model: model.to_string(),
        response,
        train_rmse: train.rmse,
        train_corr_pct: train.pearson_pct,
        val_rmse: val.rmse,
        val_corr_pct: val.pearson_pct,
        degenerate: train.degenerate || val.degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationError {
    pub location: String,
    pub n: usize,
    pub rmse: f64,
}

/// Per-location RMSE table with a below-threshold summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLocationTable {
    pub rows: Vec<LocationError>,
    pub threshold: f64,
    pub n_below_threshold: usize,
}

/// Group prediction errors by location id. Rows are sorted by location for
/// stable output.
pub fn per_location_errors(
    locations: &[String],
    predictions: &[f64],
    targets: &[f64],
    threshold: f64,
) -> Result<PerLocationTable> {
    if locations.len() != predictions.len() || predictions.len() != targets.len() {
        return Err(Error::ShapeMismatch(
            "locations/predictions/targets misaligned".into(),
        ));
    }
    let mut grouped: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for ((loc, p), t) in locations.iter().zip(predictions).zip(targets) {
        let entry = grouped.entry(loc).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += (p - t) * (p - t);
    }
    let rows: Vec<LocationError> = grouped
        .into_iter()
        .map(|(loc, (n, sse))| LocationError {
            location: loc.to_string(),
            n,
            rmse: (sse / n as f64).sqrt(),
        })
        .collect();
    let n_below_threshold = rows.iter().filter(|r| r.rmse < threshold).count();
    Ok(PerLocationTable {
        rows,
        threshold,
        n_below_threshold,
    })
}

/// Both sides of Var(y - y_c) = Var(y) + Var(y_c) - 2 Cov(y, y_c), computed
/// with the sample (n-1) convention, plus their relative gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceIdentity {
    pub var_difference: f64,
    pub identity_rhs: f64,
    pub relative_gap: f64,
}

pub fn variance_identity_check(y: &[f64], y_c: &[f64]) -> Result<VarianceIdentity> {
    if y.len() != y_c.len() {
        return Err(Error::ShapeMismatch("paired samples differ in length".into()));
    }
    if y.len() < 2 {
        return Err(Error::InvalidData("variance needs at least 2 samples".into()));
    }
    let n = y.len() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    let c_mean = y_c.iter().sum::<f64>() / n;
    let mut var_y = 0.0;
    let mut var_c = 0.0;
    let mut cov = 0.0;
    for (a, b) in y.iter().zip(y_c) {
        var_y += (a - y_mean) * (a - y_mean);
        var_c += (b - c_mean) * (b - c_mean);
        cov += (a - y_mean) * (b - c_mean);
    }
    var_y /= n - 1.0;
    var_c /= n - 1.0;
    cov /= n - 1.0;

    let diffs: Vec<f64> = y.iter().zip(y_c).map(|(a, b)| a - b).collect();
    let d_mean = diffs.iter().sum::<f64>() / n;
    let var_difference =
        diffs.iter().map(|d| (d - d_mean) * (d - d_mean)).sum::<f64>() / (n - 1.0);

    let identity_rhs = var_y + var_c - 2.0 * cov;
    let denom = var_difference.abs().max(identity_rhs.abs());
    let relative_gap = if denom > 0.0 {
        (var_difference - identity_rhs).abs() / denom
    } else {
        0.0
    };
    Ok(VarianceIdentity {
        var_difference,
        identity_rhs,
        relative_gap,
    })
}

/// Paired histogram of targets and predictions over a common binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub bin_edges: Vec<f64>,
    pub target_counts: Vec<usize>,
    pub prediction_counts: Vec<usize>,
    pub target_density: Vec<f64>,
    pub prediction_density: Vec<f64>,
    pub target_variance: f64,
    pub prediction_variance: f64,
    /// Observation flag: fitted models tend to predict tighter distributions
    /// than the truth.
    pub prediction_variance_leq_target: bool,
}

pub fn distribution_summary(
    predictions: &[f64],
    targets: &[f64],
    n_bins: usize,
) -> Result<DistributionSummary> {
    if n_bins < 2 {
        return Err(Error::InvalidConfig("need at least 2 bins".into()));
    }
    if predictions.is_empty() || targets.is_empty() {
        return Err(Error::InvalidData("empty series".into()));
    }
    let lo = predictions
        .iter()
        .chain(targets)
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = predictions
        .iter()
        .chain(targets)
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let width = if hi > lo { hi - lo } else { 1.0 };
    let edges: Vec<f64> = (0..=n_bins)
        .map(|i| lo + width * i as f64 / n_bins as f64)
        .collect();
    let bin_of =
        |v: f64| -> usize { (((v - lo) / width * n_bins as f64).floor() as usize).min(n_bins - 1) };
    let histogram = |values: &[f64]| {
        let mut counts = vec![0usize; n_bins];
        for &v in values {
            counts[bin_of(v)] += 1;
        }
        let total = values.len() as f64;
        let density: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
        (counts, density)
    };
    let (target_counts, target_density) = histogram(targets);
    let (prediction_counts, prediction_density) = histogram(predictions);
    let sample_var = |values: &[f64]| {
        let n = values.len() as f64;
        if values.len() < 2 {
            return 0.0;
        }
        let m = values.iter().sum::<f64>() / n;
        values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    };
    let target_variance = sample_var(targets);
    let prediction_variance = sample_var(predictions);
    Ok(DistributionSummary {
        bin_edges: edges,
        target_counts,
        prediction_counts,
        target_density,
        prediction_density,
        target_variance,
        prediction_variance,
        prediction_variance_leq_target: prediction_variance <= target_variance,
    })
}

/// Published benchmark value carried in reports for context only. The source
/// study's dataset is proprietary, so these are never test assertions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceValue {
    pub name: &'static str,
    pub value: f64,
}

pub const REFERENCE_BENCHMARKS: &[ReferenceValue] = &[
    ReferenceValue { name: "yield_mean", value: 116.51 },
    ReferenceValue { name: "yield_sd", value: 27.7 },
    ReferenceValue { name: "check_yield_mean", value: 128.27 },
    ReferenceValue { name: "check_yield_sd", value: 25.34 },
    ReferenceValue { name: "yield_difference_mean", value: -11.76 },
    ReferenceValue { name: "yield_difference_sd", value: 14.27 },
    ReferenceValue { name: "dnn_yield_validation_rmse", value: 12.79 },
    ReferenceValue { name: "dnn_yield_validation_corr_pct", value: 81.91 },
    ReferenceValue { name: "dnn_check_yield_validation_rmse", value: 11.38 },
    ReferenceValue { name: "dnn_yield_difference_validation_rmse", value: 12.40 },
    ReferenceValue { name: "dnn_forecast_weather_yield_validation_rmse", value: 13.94 },
    ReferenceValue { name: "lasso_yield_validation_rmse", value: 21.40 },
    ReferenceValue { name: "snn_yield_validation_rmse", value: 18.04 },
    ReferenceValue { name: "rt_yield_validation_rmse", value: 15.03 },
    ReferenceValue { name: "dnn_top50plus20_yield_validation_rmse", value: 12.81 },
];

/// Inputs for report assembly; only metrics rows are mandatory.
#[derive(Debug, Default)]
pub struct ReportInputs {
    pub metrics: Vec<MetricsRow>,
    pub ablation: Vec<MetricsRow>,
    pub identity: Option<VarianceIdentity>,
    pub per_location: Option<PerLocationTable>,
    pub distribution: Option<DistributionSummary>,
    pub effects: Option<EffectReport>,
    /// Run provenance (config hash, seed, input digests), written verbatim.
    pub manifest: Option<serde_json::Value>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(&path.display().to_string(), e))
}

fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(
        "model,response,train_rmse,train_correlation_pct,validation_rmse,validation_correlation_pct,degenerate\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model, r.response, r.train_rmse, r.train_corr_pct, r.val_rmse, r.val_corr_pct,
            r.degenerate
        ));
    }
    out
}

/// Write the machine-readable report CSVs plus a human-readable summary into
/// `dir`. Output is deterministic: no timestamps, stable orderings.
pub fn build_report(inputs: &ReportInputs, dir: &Path) -> Result<()> {
    if inputs.metrics.is_empty() {
        return Err(Error::InvalidData(
            "a report needs at least one metrics row".into(),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(&dir.display().to_string(), e))?;

    write_text(&dir.join("metrics.csv"), &metrics_csv(&inputs.metrics))?;
    if !inputs.ablation.is_empty() {
        write_text(&dir.join("ablation.csv"), &metrics_csv(&inputs.ablation))?;
    }
    if let Some(table) = &inputs.per_location {
        let mut out = String::from("location,n,rmse\n");
        for r in &table.rows {
            out.push_str(&format!("{},{},{}\n", r.location, r.n, r.rmse));
        }
        write_text(&dir.join("per_location.csv"), &out)?;
    }
    if let Some(d) = &inputs.distribution {
        let mut out = String::from(
            "bin_lo,bin_hi,target_count,target_density,prediction_count,prediction_density\n",
        );
        for i in 0..d.target_counts.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                d.bin_edges[i],
                d.bin_edges[i + 1],
                d.target_counts[i],
                d.target_density[i],
                d.prediction_counts[i],
                d.prediction_density[i]
            ));
        }
        write_text(&dir.join("distribution.csv"), &out)?;
    }
    if let Some(effects) = &inputs.effects {
        effects.to_csv(&dir.join("effects.csv"))?;
    }
    if let Some(manifest) = &inputs.manifest {
        let json = serde_json::to_string_pretty(manifest)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        write_text(&dir.join("manifest.json"), &json)?;
    }

    let mut summary = String::new();
    summary.push_str("Yield modeling report\n=====================\n\n");
    summary.push_str("Conventions: sample (n-1) variance; correlations in percent;\n");
    summary.push_str("a constant predictor reports correlation 0 (degenerate).\n\n");
    summary.push_str("Model comparison (training / validation):\n");
    for r in &inputs.metrics {
        summary.push_str(&format!(
            "  {:<12} {:<16} RMSE {:>10.4} / {:>10.4}   corr% {:>8.2} / {:>8.2}{}\n",
            r.model,
            r.response.to_string(),
            r.train_rmse,
            r.val_rmse,
            r.train_corr_pct,
            r.val_corr_pct,
            if r.degenerate { "   [degenerate]" } else { "" }
        ));
    }
    if !inputs.ablation.is_empty() {
        summary.push_str("\nSingle-source ablations (yield):\n");
        for r in &inputs.ablation {
            summary.push_str(&format!(
                "  {:<12} RMSE {:>10.4} / {:>10.4}   corr% {:>8.2} / {:>8.2}\n",
                r.model, r.train_rmse, r.val_rmse, r.train_corr_pct, r.val_corr_pct
            ));
        }
    }
    if let Some(id) = &inputs.identity {
        summary.push_str(&format!(
            "\nVariance identity: Var(y_d) = {:.6}, Var(y)+Var(y_c)-2Cov = {:.6}, relative gap {:.3e}\n",
            id.var_difference, id.identity_rhs, id.relative_gap
        ));
    }
    if let Some(t) = &inputs.per_location {
        summary.push_str(&format!(
            "\nPer-location errors: {} locations, {} below RMSE {}\n",
            t.rows.len(),
            t.n_below_threshold,
            t.threshold
        ));
    }
    if let Some(d) = &inputs.distribution {
        summary.push_str(&format!(
            "\nDistributions: target variance {:.4}, prediction variance {:.4} ({})\n",
            d.target_variance,
            d.prediction_variance,
            if d.prediction_variance_leq_target {
                "prediction tighter or equal"
            } else {
                "prediction wider"
            }
        ));
    }
    summary.push_str(
        "\nReference values from the source study (proprietary data; not reproduced by this run):\n",
    );
    for r in REFERENCE_BENCHMARKS {
        summary.push_str(&format!("  {:<44} {}\n", r.name, r.value));
    }
    write_text(&dir.join("summary.txt"), &summary)?;
    Ok(())
}
