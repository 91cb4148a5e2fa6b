//! L1-penalized linear regression by cyclic coordinate descent with
//! soft-thresholding.
//!
//! Objective: (1/2n) * ||y - intercept - X b||^2 + lambda * ||b||_1.
//! Features are standardized internally (centered, unit population sd) and
//! the intercept is unpenalized; reported coefficients are un-standardized
//! back to original feature units.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    /// Coefficients in original feature units.
    pub coefficients: Array1<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub tolerance: f64,
    pub sweeps_run: usize,
    pub converged: bool,
    /// Penalized objective after each sweep (non-increasing).
    pub objective_trace: Vec<f64>,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
}

impl LassoModel {
    pub fn predict(&self, design: &Array2<f64>) -> Result<Array1<f64>> {
        if design.ncols() != self.coefficients.len() {
            return Err(Error::ShapeMismatch(format!(
                "design width {} != {} coefficients",
                design.ncols(),
                self.coefficients.len()
            )));
        }
        Ok(design.dot(&self.coefficients) + self.intercept)
    }
}

fn soft_threshold(value: f64, threshold: f64) -> f64 {
    if value > threshold {
        value - threshold
    } else if value < -threshold {
        value + threshold
    } else {
        0.0
    }
}

/// Fit by cyclic coordinate descent until the largest coefficient change in a
/// sweep drops below `tolerance` or `max_sweeps` is reached. Non-convergence
/// is flagged on the model, not fatal.
pub fn fit_lasso(
    design: &Array2<f64>,
    targets: &Array1<f64>,
    lambda: f64,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<LassoModel> {
    let n = design.nrows();
    let p = design.ncols();
    if n == 0 || p == 0 {
        return Err(Error::InvalidData("empty design".into()));
    }
    if targets.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} rows vs {} targets",
            targets.len()
        )));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidConfig("lambda must be non-negative".into()));
    }
    if !(tolerance > 0.0) || max_sweeps == 0 {
        return Err(Error::InvalidConfig(
            "tolerance must be positive and max_sweeps >= 1".into(),
        ));
    }
    let nf = n as f64;

    // Standardize columns; zero-variance columns are frozen at coefficient 0.
    let mut mean = Vec::with_capacity(p);
    let mut scale = Vec::with_capacity(p);
    let mut x = design.clone();
    for j in 0..p {
        let col = design.column(j);
        let m = col.sum() / nf;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / nf;
        let sd = var.sqrt();
        mean.push(m);
        scale.push(sd);
        if sd > 0.0 {
            x.column_mut(j).mapv_inplace(|v| (v - m) / sd);
        } else {
            x.column_mut(j).fill(0.0);
        }
    }
    let y_mean = targets.sum() / nf;
    let y_centered = targets.mapv(|t| t - y_mean);

    // Per-coordinate curvature (x_j . x_j) / n; ~1 after standardization.
    let curvature: Vec<f64> = (0..p)
        .map(|j| x.column(j).iter().map(|v| v * v).sum::<f64>() / nf)
        .collect();

    let mut beta = Array1::<f64>::zeros(p);
    let mut residual = y_centered.clone();
    let objective = |residual: &Array1<f64>, beta: &Array1<f64>| {
        residual.iter().map(|r| r * r).sum::<f64>() / (2.0 * nf)
            + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    };

    let mut converged = false;
    let mut sweeps_run = 0;
    let mut trace = Vec::new();
    for _ in 0..max_sweeps {
        sweeps_run += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            if curvature[j] <= 0.0 {
                continue;
            }
            let old = beta[j];
            let col = x.column(j);
            // rho = (x_j . residual)/n + curvature * old, the coordinate-wise
            // least-squares fit with beta_j removed.
            let rho = col.dot(&residual) / nf + curvature[j] * old;
            let new = soft_threshold(rho, lambda) / curvature[j];
            if new != old {
                let delta = new - old;
                residual.zip_mut_with(&col, |r, &v| *r -= delta * v);
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        trace.push(objective(&residual, &beta));
        if max_delta < tolerance {
            converged = true;
            break;
        }
    }

    // Back to original units: b_orig = b_std / scale; intercept absorbs means.
    let mut coefficients = Array1::<f64>::zeros(p);
    let mut intercept = y_mean;
    for j in 0..p {
        if scale[j] > 0.0 {
            coefficients[j] = beta[j] / scale[j];
            intercept -= coefficients[j] * mean[j];
        }
    }

    Ok(LassoModel {
        coefficients,
        intercept,
        lambda,
        tolerance,
        sweeps_run,
        converged,
        objective_trace: trace,
        feature_mean: mean,
        feature_scale: scale,
    })
}

/// Smallest lambda at which every coefficient is zero, in the standardized
/// objective's units.
pub fn lambda_max(design: &Array2<f64>, targets: &Array1<f64>) -> Result<f64> {
    let n = design.nrows();
    if n == 0 {
        return Err(Error::InvalidData("empty design".into()));
    }
    let nf = n as f64;
    let y_mean = targets.sum() / nf;
    let mut best: f64 = 0.0;
    for j in 0..design.ncols() {
        let col = design.column(j);
        let m = col.sum() / nf;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / nf;
        let sd = var.sqrt();
        if sd <= 0.0 {
            continue;
        }
        let corr = col
            .iter()
            .zip(targets)
            .map(|(v, t)| (v - m) / sd * (t - y_mean))
            .sum::<f64>()
            / nf;
        best = best.max(corr.abs());
    }
    Ok(best)
}
