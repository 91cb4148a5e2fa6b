//! Lagged weather forecasting: one shallow network per weather variable,
//! pooled across locations, mapping a 4-year window to the next year's value.
//!
//! Lag inputs and targets are standardized per variable with statistics
//! fitted on the training samples; a variable with zero target variance is
//! fitted as a constant predictor and reported as a warning.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{EnvironmentTable, WEATHER_VARS};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::nn::{predict, train_network, NetworkParams, NetworkSpec, TrainConfig};

pub const DEFAULT_LAG: usize = 4;
pub const DEFAULT_HIDDEN_WIDTH: usize = 10;

const FORECASTER_VERSION: u32 = 1;

/// Training schedule suited to the small per-variable networks.
pub fn default_weather_config(seed: u64) -> TrainConfig {
    TrainConfig {
        base_lr: 3e-3,
        max_iterations: 4_000,
        l1_lambda: 0.0,
        l2_lambda: 1e-6,
        ..TrainConfig::desk(seed)
    }
}

/// Lagged samples shared by all weather variables: one row per
/// (location, target year) whose `lag` predecessors all exist.
#[derive(Debug, Clone)]
pub struct LagSampleSet {
    env: Arc<EnvironmentTable>,
    rows: Vec<(usize, i32)>,
    lag: usize,
}

impl LagSampleSet {
    /// Samples per weather variable.
    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    /// (location index, target year) provenance of each row.
    pub fn rows(&self) -> &[(usize, i32)] {
        &self.rows
    }

    /// Materialize the (inputs, targets) pair for one variable. Input column
    /// `c` holds the value from `c + 1` years before the target.
    pub fn variable_samples(&self, variable: usize) -> (Array2<f64>, Array1<f64>) {
        let n = self.rows.len();
        let mut x = Array2::<f64>::zeros((n, self.lag));
        let mut y = Array1::<f64>::zeros(n);
        for (r, &(loc, year)) in self.rows.iter().enumerate() {
            y[r] = self.env.weather_at(loc, year).expect("row validated")[variable];
            for c in 0..self.lag {
                x[[r, c]] = self
                    .env
                    .weather_at(loc, year - 1 - c as i32)
                    .expect("row validated")[variable];
            }
        }
        (x, y)
    }
}

/// Pool lagged samples over all locations. A (location, year) produces a
/// sample iff the `lag` preceding years exist at that location.
pub fn build_lag_samples(env: &Arc<EnvironmentTable>, lag: usize) -> Result<LagSampleSet> {
    if lag == 0 {
        return Err(Error::InvalidConfig("lag must be positive".into()));
    }
    let mut rows = Vec::new();
    for l in 0..env.n_locations() {
        for year in env.years_at(l) {
            let window_ok = (1..=lag).all(|d| env.weather_row_index(l, year - d as i32).is_some());
            if window_ok {
                rows.push((l, year));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidData(format!(
            "no location has more than {lag} years of weather"
        )));
    }
    Ok(LagSampleSet {
        env: Arc::clone(env),
        rows,
        lag,
    })
}

/// Fitted model for one weather variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VariableModel {
    Net(NetworkParams),
    /// Degenerate (constant) variable.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableForecaster {
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
    pub model: VariableModel,
}

/// 72 fitted shallow networks (or constant fallbacks), one per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherForecaster {
    pub version: u32,
    pub lag: usize,
    pub hidden_width: usize,
    pub train_config: TrainConfig,
    pub models: Vec<VariableForecaster>,
    /// Variables fitted as constants.
    pub warnings: Vec<String>,
}

impl WeatherForecaster {
    fn spec(&self) -> NetworkSpec {
        NetworkSpec::shallow(self.lag, self.hidden_width)
    }

    /// Predict one variable from its lag window (most recent year first).
    pub fn predict_variable(&self, variable: usize, lags: &[f64]) -> Result<f64> {
        if variable >= self.models.len() {
            return Err(Error::InvalidData(format!("variable {variable} out of range")));
        }
        if lags.len() != self.lag {
            return Err(Error::ShapeMismatch(format!(
                "{} lag values, expected {}",
                lags.len(),
                self.lag
            )));
        }
        let vf = &self.models[variable];
        match &vf.model {
            VariableModel::Constant(c) => Ok(*c),
            VariableModel::Net(params) => {
                let mut x = Array2::<f64>::zeros((1, self.lag));
                for c in 0..self.lag {
                    x[[0, c]] = (lags[c] - vf.input_mean[c]) / vf.input_scale[c];
                }
                let out = predict(params, &self.spec(), &x)?;
                Ok(out[0] * vf.target_scale + vf.target_mean)
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(&path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(&path.display().to_string(), e))?;
        let fc: Self =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        if fc.version != FORECASTER_VERSION {
            return Err(Error::Serialization(format!(
                "forecaster version {} unsupported (expected {FORECASTER_VERSION})",
                fc.version
            )));
        }
        if fc.models.len() != WEATHER_VARS {
            return Err(Error::InvalidData(format!(
                "forecaster bundle has {} models, expected {WEATHER_VARS}",
                fc.models.len()
            )));
        }
        Ok(fc)
    }
}

fn column_stats(values: &Array1<f64>) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.sum() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Train one shallow network per weather variable on the pooled lag samples.
/// Deterministic: each variable derives its own seed from the config seed.
pub fn train_forecasters(
    samples: &LagSampleSet,
    hidden_width: usize,
    config: &TrainConfig,
) -> Result<WeatherForecaster> {
    if hidden_width == 0 {
        return Err(Error::InvalidConfig("hidden_width must be positive".into()));
    }
    let spec = NetworkSpec::shallow(samples.lag(), hidden_width);
    let mut models = Vec::with_capacity(WEATHER_VARS);
    let mut warnings = Vec::new();

    for w in 0..WEATHER_VARS {
        let (x, y) = samples.variable_samples(w);
        let (t_mean, t_scale) = column_stats(&y);
        if t_scale <= 0.0 {
            warnings.push(format!("w_{:02} is constant; fitted as constant predictor", w + 1));
            models.push(VariableForecaster {
                input_mean: vec![0.0; samples.lag()],
                input_scale: vec![1.0; samples.lag()],
                target_mean: t_mean,
                target_scale: 1.0,
                model: VariableModel::Constant(t_mean),
            });
            continue;
        }

        let mut input_mean = Vec::with_capacity(samples.lag());
        let mut input_scale = Vec::with_capacity(samples.lag());
        let mut xs = x.clone();
        for c in 0..samples.lag() {
            let col = x.column(c).to_owned();
            let (mean, sd) = column_stats(&col);
            let scale = if sd > 0.0 { sd } else { 1.0 };
            input_mean.push(mean);
            input_scale.push(scale);
            xs.column_mut(c).mapv_inplace(|v| (v - mean) / scale);
        }
        let ys = y.mapv(|v| (v - t_mean) / t_scale);

        let variable_config = TrainConfig {
            seed: derive_seed(config.seed, &format!("weather-{w}")),
            ..*config
        };
        let (params, _) = train_network(&spec, &variable_config, &xs, &ys, None)?;
        models.push(VariableForecaster {
            input_mean,
            input_scale,
            target_mean: t_mean,
            target_scale: t_scale,
            model: VariableModel::Net(params),
        });
    }

    Ok(WeatherForecaster {
        version: FORECASTER_VERSION,
        lag: samples.lag(),
        hidden_width,
        train_config: *config,
        models,
        warnings,
    })
}

/// Forecast output: one 72-vector per location that had a full lag window,
/// plus the locations that lacked one.
#[derive(Debug, Clone)]
pub struct ForecastOutcome {
    pub target_year: i32,
    pub rows: Vec<(String, Vec<f64>)>,
    pub missing: Vec<(String, String)>,
}

impl ForecastOutcome {
    /// Rows in the weather.csv schema (with the forecast marker column).
    pub fn weather_rows(&self) -> Vec<(String, i32, Vec<f64>)> {
        self.rows
            .iter()
            .map(|(loc, vals)| (loc.clone(), self.target_year, vals.clone()))
            .collect()
    }
}

/// Predict all 72 variables for every location at `target_year` from the
/// preceding lag window. Locations lacking the window are reported, not
/// silently skipped; it is an error if none has it.
pub fn forecast_year(
    forecaster: &WeatherForecaster,
    env: &EnvironmentTable,
    target_year: i32,
) -> Result<ForecastOutcome> {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for l in 0..env.n_locations() {
        let window: Option<Vec<_>> = (1..=forecaster.lag)
            .map(|d| env.weather_at(l, target_year - d as i32))
            .collect();
        let Some(window) = window else {
            missing.push((
                env.location_id(l).to_string(),
                format!(
                    "missing weather in [{}, {}]",
                    target_year - forecaster.lag as i32,
                    target_year - 1
                ),
            ));
            continue;
        };
        let mut values = Vec::with_capacity(WEATHER_VARS);
        for w in 0..WEATHER_VARS {
            let lags: Vec<f64> = window.iter().map(|row| row[w]).collect();
            values.push(forecaster.predict_variable(w, &lags)?);
        }
        rows.push((env.location_id(l).to_string(), values));
    }
    if rows.is_empty() {
        return Err(Error::InvalidData(format!(
            "no location has the {}-year window before {target_year}",
            forecaster.lag
        )));
    }
    Ok(ForecastOutcome {
        target_year,
        rows,
        missing,
    })
}

/// Backtest on a year already present in the table: RMSE of the forecaster
/// against truth, next to the repeat-last-year naive baseline.
#[derive(Debug, Clone, Copy)]
pub struct BacktestReport {
    pub forecast_rmse: f64,
    pub naive_rmse: f64,
    pub n_values: usize,
}

pub fn backtest(
    forecaster: &WeatherForecaster,
    env: &EnvironmentTable,
    target_year: i32,
) -> Result<BacktestReport> {
    let outcome = forecast_year(forecaster, env, target_year)?;
    let mut predicted = Vec::new();
    let mut naive = Vec::new();
    let mut truth = Vec::new();
    for (loc, values) in &outcome.rows {
        let l = env.location_index(loc).expect("forecast rows come from env");
        let Some(actual) = env.weather_at(l, target_year) else {
            continue;
        };
        let last = env
            .weather_at(l, target_year - 1)
            .expect("lag window includes the previous year");
        for w in 0..WEATHER_VARS {
            predicted.push(values[w]);
            naive.push(last[w]);
            truth.push(actual[w]);
        }
    }
    if truth.is_empty() {
        return Err(Error::InvalidData(format!(
            "no ground-truth weather at {target_year} to backtest against"
        )));
    }
    let forecast_rmse = crate::evaluate::metrics(&predicted, &truth)?.rmse;
    let naive_rmse = crate::evaluate::metrics(&naive, &truth)?.rmse;
    Ok(BacktestReport {
        forecast_rmse,
        naive_rmse,
        n_values: truth.len(),
    })
}
