//! Genotype quality filtering, median imputation, and design-matrix assembly
//! with reusable fitted metadata.
//!
//! Markers are kept when they clear both a call-rate and a minor-allele
//! frequency threshold, each computed on the original (pre-imputation) panel,
//! so the two filters commute. Missing calls are imputed with the per-marker
//! median, ties rounding toward the heterozygous code 0. Environmental
//! features are standardized with statistics fitted on training rows only;
//! marker codes stay on their {-1, 0, 1} scale.

use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{FieldTrialDataset, MarkerMatrix, MISSING_CODE, SOIL_VARS, WEATHER_VARS};
use crate::error::{Error, Result};
use crate::synth::FeatureGroup;

pub const DEFAULT_CALL_RATE: f64 = 0.97;
pub const DEFAULT_MAF: f64 = 0.01;

const FIT_VERSION: u32 = 1;

/// Thresholds used when fitting preprocessing from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub call_rate: f64,
    pub maf: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            call_rate: DEFAULT_CALL_RATE,
            maf: DEFAULT_MAF,
        }
    }
}

/// Fitted preprocessing metadata: kept markers, imputation medians, and
/// train-split standardization statistics for the environmental features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessFit {
    pub version: u32,
    pub call_rate: f64,
    pub maf: f64,
    /// Kept marker columns as indices into the original genotype table, ascending.
    pub kept_markers: Vec<usize>,
    /// Imputation median per kept marker, each in {-1, 0, 1}.
    pub medians: Vec<i8>,
    /// Kept weather variables (indices into w_01..w_72), ascending.
    pub kept_weather: Vec<usize>,
    /// Kept soil variables (indices into s_1..s_8), ascending.
    pub kept_soil: Vec<usize>,
    pub weather_mean: Vec<f64>,
    pub weather_scale: Vec<f64>,
    pub soil_mean: Vec<f64>,
    pub soil_scale: Vec<f64>,
    /// Zero-variance features whose scale was clamped to 1.
    pub clamped_features: Vec<String>,
}

impl PreprocessFit {
    pub fn n_features(&self) -> usize {
        self.kept_markers.len() + self.kept_weather.len() + self.kept_soil.len()
    }

    pub fn marker_block(&self) -> Range<usize> {
        0..self.kept_markers.len()
    }

    pub fn weather_block(&self) -> Range<usize> {
        let s = self.kept_markers.len();
        s..s + self.kept_weather.len()
    }

    pub fn soil_block(&self) -> Range<usize> {
        let s = self.kept_markers.len() + self.kept_weather.len();
        s..self.n_features()
    }

    pub fn feature_group(&self, design_col: usize) -> FeatureGroup {
        if self.marker_block().contains(&design_col) {
            FeatureGroup::Marker
        } else if self.weather_block().contains(&design_col) {
            FeatureGroup::Weather
        } else {
            FeatureGroup::Soil
        }
    }

    /// Design-column labels: marker names, then w_XX, then s_X.
    pub fn feature_names(&self, markers: &MarkerMatrix) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_features());
        for &j in &self.kept_markers {
            names.push(markers.marker_names()[j].clone());
        }
        for &w in &self.kept_weather {
            names.push(format!("w_{:02}", w + 1));
        }
        for &s in &self.kept_soil {
            names.push(format!("s_{}", s + 1));
        }
        names
    }

    /// New fit keeping only the given design columns (e.g. after feature
    /// selection or a single-source ablation). Statistics are carried over.
    pub fn restrict_to_design_columns(&self, design_cols: &[usize]) -> Result<Self> {
        let mut kept_markers = Vec::new();
        let mut medians = Vec::new();
        let mut kept_weather = Vec::new();
        let mut weather_mean = Vec::new();
        let mut weather_scale = Vec::new();
        let mut kept_soil = Vec::new();
        let mut soil_mean = Vec::new();
        let mut soil_scale = Vec::new();

        let mut sorted: Vec<usize> = design_cols.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for &col in &sorted {
            if col >= self.n_features() {
                return Err(Error::InvalidData(format!(
                    "design column {col} out of range ({} features)",
                    self.n_features()
                )));
            }
            if self.marker_block().contains(&col) {
                kept_markers.push(self.kept_markers[col]);
                medians.push(self.medians[col]);
            } else if self.weather_block().contains(&col) {
                let i = col - self.weather_block().start;
                kept_weather.push(self.kept_weather[i]);
                weather_mean.push(self.weather_mean[i]);
                weather_scale.push(self.weather_scale[i]);
            } else {
                let i = col - self.soil_block().start;
                kept_soil.push(self.kept_soil[i]);
                soil_mean.push(self.soil_mean[i]);
                soil_scale.push(self.soil_scale[i]);
            }
        }
        Ok(Self {
            version: self.version,
            call_rate: self.call_rate,
            maf: self.maf,
            kept_markers,
            medians,
            kept_weather,
            weather_mean,
            weather_scale,
            kept_soil,
            soil_mean,
            soil_scale,
            clamped_features: self.clamped_features.clone(),
        })
    }

    /// New fit keeping only one feature group (for single-source ablations).
    pub fn restrict_to_group(&self, group: FeatureGroup) -> Self {
        let cols: Vec<usize> = match group {
            FeatureGroup::Marker => self.marker_block().collect(),
            FeatureGroup::Weather => self.weather_block().collect(),
            FeatureGroup::Soil => self.soil_block().collect(),
        };
        self.restrict_to_design_columns(&cols)
            .expect("own blocks are in range")
    }

    fn validate(&self) -> Result<()> {
        if self.version != FIT_VERSION {
            return Err(Error::Serialization(format!(
                "preprocess fit version {} unsupported (expected {FIT_VERSION})",
                self.version
            )));
        }
        if self.medians.len() != self.kept_markers.len() {
            return Err(Error::InvalidData("medians misaligned with kept markers".into()));
        }
        if self.medians.iter().any(|m| !(-1..=1).contains(m)) {
            return Err(Error::InvalidData("imputation median outside {-1,0,1}".into()));
        }
        if self
            .weather_scale
            .iter()
            .chain(self.soil_scale.iter())
            .any(|&s| !(s > 0.0))
        {
            return Err(Error::InvalidData("non-positive standardization scale".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(&path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(&path.display().to_string(), e))?;
        let fit: Self =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        fit.validate()?;
        Ok(fit)
    }
}

struct MarkerStats {
    call_fraction: f64,
    maf: f64,
}

fn marker_stats(markers: &MarkerMatrix, col: usize) -> MarkerStats {
    let n = markers.n_hybrids();
    let mut c_pos = 0usize;
    let mut c_zero = 0usize;
    let mut c_neg = 0usize;
    for &v in markers.values().column(col) {
        match v {
            1 => c_pos += 1,
            0 => c_zero += 1,
            -1 => c_neg += 1,
            _ => {}
        }
    }
    let non_missing = c_pos + c_zero + c_neg;
    let call_fraction = non_missing as f64 / n as f64;
    let maf = if non_missing == 0 {
        0.0
    } else {
        let freq_a = (2 * c_pos + c_zero) as f64 / (2 * non_missing) as f64;
        freq_a.min(1.0 - freq_a)
    };
    MarkerStats { call_fraction, maf }
}

/// Keep markers whose call rate and minor allele frequency both clear the
/// thresholds, each evaluated on the original data.
pub fn filter_markers(
    markers: &MarkerMatrix,
    call_rate: f64,
    maf: f64,
) -> Result<(MarkerMatrix, Vec<usize>)> {
    if markers.n_hybrids() == 0 || markers.n_markers() == 0 {
        return Err(Error::InvalidData("empty marker matrix".into()));
    }
    let kept: Vec<usize> = (0..markers.n_markers())
        .filter(|&j| {
            let stats = marker_stats(markers, j);
            stats.call_fraction >= call_rate && stats.maf >= maf
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::InvalidData(format!(
            "all {} markers fail the call-rate {call_rate} / MAF {maf} filters",
            markers.n_markers()
        )));
    }
    Ok((markers.select_markers(&kept)?, kept))
}

fn median_from_counts(c_neg: usize, c_zero: usize, c_pos: usize) -> i8 {
    let n = c_neg + c_zero + c_pos;
    let value_at = |k: usize| -> i8 {
        if k < c_neg {
            -1
        } else if k < c_neg + c_zero {
            0
        } else {
            1
        }
    };
    if n % 2 == 1 {
        value_at(n / 2)
    } else {
        let lo = value_at(n / 2 - 1);
        let hi = value_at(n / 2);
        // Ties between distinct codes round toward the heterozygous 0.
        if lo == hi {
            lo
        } else {
            0
        }
    }
}

/// Per-marker imputation medians over non-missing codes.
pub fn marker_medians(markers: &MarkerMatrix) -> Result<Vec<i8>> {
    let mut medians = Vec::with_capacity(markers.n_markers());
    for j in 0..markers.n_markers() {
        let mut c = [0usize; 3];
        for &v in markers.values().column(j) {
            match v {
                -1 => c[0] += 1,
                0 => c[1] += 1,
                1 => c[2] += 1,
                _ => {}
            }
        }
        if c.iter().sum::<usize>() == 0 {
            return Err(Error::InvalidData(format!(
                "marker {} is fully missing; cannot impute",
                markers.marker_names()[j]
            )));
        }
        medians.push(median_from_counts(c[0], c[1], c[2]));
    }
    Ok(medians)
}

/// Replace every missing call with the marker's median code.
pub fn impute_median(markers: &MarkerMatrix) -> Result<MarkerMatrix> {
    let medians = marker_medians(markers)?;
    let mut values = markers.values().clone();
    for j in 0..markers.n_markers() {
        for v in values.column_mut(j) {
            if *v == MISSING_CODE {
                *v = medians[j];
            }
        }
    }
    MarkerMatrix::new(
        markers.hybrid_ids().to_vec(),
        markers.marker_names().to_vec(),
        values,
    )
}

/// Design matrix plus the fit that produced it.
#[derive(Debug)]
pub struct DesignOutcome {
    pub design: Array2<f64>,
    pub fit: PreprocessFit,
}

fn column_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fit_from_dataset(
    dataset: &FieldTrialDataset,
    options: &PreprocessOptions,
) -> Result<PreprocessFit> {
    if dataset.is_empty() {
        return Err(Error::InvalidData(
            "cannot fit preprocessing on an empty dataset".into(),
        ));
    }
    let markers = dataset.markers();
    let (_, kept_markers) = filter_markers(markers, options.call_rate, options.maf)?;
    let all_medians = marker_medians(markers)?;
    let medians: Vec<i8> = kept_markers.iter().map(|&j| all_medians[j]).collect();

    let n = dataset.n();
    let mut clamped = Vec::new();
    let mut std_block = |count: usize, get: &dyn Fn(usize, usize) -> f64, label: &str| {
        let mut means = Vec::with_capacity(count);
        let mut scales = Vec::with_capacity(count);
        for c in 0..count {
            let col: Vec<f64> = (0..n).map(|r| get(r, c)).collect();
            let (mean, sd) = column_stats(&col);
            means.push(mean);
            if sd > 0.0 {
                scales.push(sd);
            } else {
                scales.push(1.0);
                clamped.push(format!("{label}_{:02}", c + 1));
            }
        }
        (means, scales)
    };

    let (weather_mean, weather_scale) = std_block(WEATHER_VARS, &|r, c| dataset.weather(r)[c], "w");
    let (soil_mean, soil_scale) = std_block(SOIL_VARS, &|r, c| dataset.soil(r)[c], "s");

    Ok(PreprocessFit {
        version: FIT_VERSION,
        call_rate: options.call_rate,
        maf: options.maf,
        kept_markers,
        medians,
        kept_weather: (0..WEATHER_VARS).collect(),
        kept_soil: (0..SOIL_VARS).collect(),
        weather_mean,
        weather_scale,
        soil_mean,
        soil_scale,
        clamped_features: clamped,
    })
}

/// Assemble the design matrix `[kept imputed markers | standardized weather |
/// standardized soil]` for a dataset.
///
/// With `fit = None`, thresholds and standardization statistics are fitted on
/// this dataset (the training split); pass the returned fit back in to
/// transform validation rows with training statistics.
pub fn assemble_design(
    dataset: &FieldTrialDataset,
    fit: Option<&PreprocessFit>,
    options: &PreprocessOptions,
) -> Result<DesignOutcome> {
    let fit = match fit {
        Some(f) => {
            f.validate()?;
            if f.kept_markers
                .iter()
                .any(|&j| j >= dataset.markers().n_markers())
            {
                return Err(Error::InvalidData(
                    "fit references marker columns missing from this dataset".into(),
                ));
            }
            f.clone()
        }
        None => fit_from_dataset(dataset, options)?,
    };

    let n = dataset.n();
    let d = fit.n_features();
    let mut design = Array2::<f64>::zeros((n, d));
    let p = fit.kept_markers.len();
    let kw = fit.kept_weather.len();
    for r in 0..n {
        let genotype = dataset.marker_row(r);
        for (c, (&j, &median)) in fit.kept_markers.iter().zip(&fit.medians).enumerate() {
            let code = genotype[j];
            design[[r, c]] = f64::from(if code == MISSING_CODE { median } else { code });
        }
        let weather = dataset.weather(r);
        for (c, &w) in fit.kept_weather.iter().enumerate() {
            design[[r, p + c]] = (weather[w] - fit.weather_mean[c]) / fit.weather_scale[c];
        }
        let soil = dataset.soil(r);
        for (c, &s) in fit.kept_soil.iter().enumerate() {
            design[[r, p + kw + c]] = (soil[s] - fit.soil_mean[c]) / fit.soil_scale[c];
        }
    }

    Ok(DesignOutcome { design, fit })
}
