//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Every tolerance is pinned in code. Oracles (brute-force filters, sorted
//! medians, exhaustive split search, closed-form least squares, the
//! hypergeometric tail) are implemented here, independent of the library
//! paths they check.

use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use yieldcast_core::baselines::{fit_dual_lasso, fit_lasso, fit_regression_tree, LassoSettings, TreeParams};
use yieldcast_core::data::{
    join_trials, split_by_year, MarkerMatrix, SplitRule, MISSING_CODE,
};
use yieldcast_core::evaluate::{metrics, variance_identity_check};
use yieldcast_core::feature_select::{
    activated_neuron_mask, effects_via_guided_backprop, select_top_features,
};
use yieldcast_core::nn::{
    adam_update, gradient_check, lr_at, train_network, Activation, Checkpoint, NetworkSpec,
    TrainConfig,
};
use yieldcast_core::preprocess::{
    assemble_design, filter_markers, impute_median, PreprocessOptions,
};
use yieldcast_core::synth::{generate_synthetic, write_synthetic, FeatureGroup, SynthConfig};
use yieldcast_core::weather::{
    backtest, build_lag_samples, default_weather_config, forecast_year, train_forecasters,
};
use yieldcast_core::yield_model::{
    ablation_single_source, predict_triplet, train_pair, AblationSource,
};

fn pass(criterion: usize, label: &str, detail: String) {
    println!("[PASS] criterion {criterion:02}: {label} - {detail}");
}

// ---------------------------------------------------------------------------
// 1. Gradient exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_exactness() {
    let t0 = Instant::now();
    let mut worst_maxout: f64 = 0.0;
    for (seed, layers, width) in [(1u64, 5usize, 6usize), (2, 6, 8), (3, 4, 5)] {
        let spec = NetworkSpec {
            input_dim: 4,
            hidden_layers: layers,
            hidden_width: width,
            activation: Activation::Maxout { pieces: 2 },
            residual_period: 2,
            batchnorm: true,
            output_dim: 1,
        };
        let report = gradient_check(&spec, seed, 1e-5).expect("gradient check runs");
        assert!(
            report.max_relative_error < 1e-4,
            "seed {seed}: max relative error {} >= 1e-4",
            report.max_relative_error
        );
        worst_maxout = worst_maxout.max(report.max_relative_error);
    }

    let mut worst_linear: f64 = 0.0;
    for (seed, layers) in [(4u64, 0usize), (5, 3)] {
        let spec = NetworkSpec {
            input_dim: 4,
            hidden_layers: layers,
            hidden_width: 5,
            activation: Activation::Linear,
            residual_period: 2,
            batchnorm: false,
            output_dim: 1,
        };
        let report = gradient_check(&spec, seed, 1e-5).expect("gradient check runs");
        assert!(
            report.max_relative_error < 1e-7,
            "linear seed {seed}: max relative error {} >= 1e-7",
            report.max_relative_error
        );
        worst_linear = worst_linear.max(report.max_relative_error);
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 60, "gradient checks took {elapsed:?}");
    pass(
        1,
        "gradient exactness",
        format!(
            "maxout+bn+residual worst {worst_maxout:.3e} < 1e-4; linear worst {worst_linear:.3e} < 1e-7; {elapsed:.2?}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Optimizer check
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_adam_and_schedule() {
    // 10-dimensional convex quadratic with distinct curvatures.
    let a: Vec<f64> = (0..10).map(|i| 0.5 + i as f64 * 0.35).collect();
    let c: Vec<f64> = (0..10).map(|i| (i as f64 * 0.9).sin() * 2.0).collect();
    let config = TrainConfig {
        base_lr: 0.05,
        lr_halving_period: 1000,
        ..TrainConfig::desk(0)
    };
    let mut x = vec![0.0; 10];
    let mut m = vec![0.0; 10];
    let mut v = vec![0.0; 10];
    let mut reached = None;
    for it in 0..50_000usize {
        let g: Vec<f64> = (0..10).map(|i| 2.0 * a[i] * (x[i] - c[i])).collect();
        adam_update(
            &mut x,
            &g,
            &mut m,
            &mut v,
            (it + 1) as u64,
            lr_at(it, &config),
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        );
        let err = x
            .iter()
            .zip(&c)
            .map(|(xi, ci)| (xi - ci).abs())
            .fold(0.0f64, f64::max);
        if err < 1e-6 {
            reached = Some((it + 1, err));
            break;
        }
    }
    let (steps, err) = reached.expect("Adam reaches the minimizer within 50,000 steps");

    let paper = TrainConfig::paper(0);
    assert_eq!(lr_at(0, &paper), 3e-4);
    assert_eq!(lr_at(50_000, &paper), 1.5e-4);
    assert_eq!(lr_at(100_000, &paper), 7.5e-5);
    pass(
        2,
        "optimizer check",
        format!("minimizer within {err:.2e} after {steps} steps; lr sequence 3e-4 / 1.5e-4 / 7.5e-5 exact"),
    );
}

// ---------------------------------------------------------------------------
// 3. Preprocessing oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_preprocessing_oracle() {
    let n = 60usize;
    let p = 1000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut values = Array2::<i8>::zeros((n, p));
    for j in 0..p {
        // Planted allele frequencies (including sub-1%) and missingness.
        let f: f64 = rng.random_range(0.0..0.5);
        let miss: f64 = rng.random_range(0.0..0.10);
        for i in 0..n {
            let u: f64 = rng.random();
            values[[i, j]] = if rng.random::<f64>() < miss {
                MISSING_CODE
            } else if u < (1.0 - f) * (1.0 - f) {
                -1
            } else if u < (1.0 - f) * (1.0 - f) + 2.0 * f * (1.0 - f) {
                0
            } else {
                1
            };
        }
    }
    let markers = MarkerMatrix::new(
        (0..n).map(|i| format!("h{i}")).collect(),
        (0..p).map(|j| format!("m_{j:04}")).collect(),
        values.clone(),
    )
    .unwrap();

    // Brute-force re-check of both rules, each computed independently.
    let mut oracle_kept = Vec::new();
    for j in 0..p {
        let col: Vec<i8> = values.column(j).iter().copied().collect();
        let present: Vec<i8> = col.iter().copied().filter(|&v| v != MISSING_CODE).collect();
        let call_ok = present.len() as f64 / n as f64 >= 0.97;
        let maf_ok = if present.is_empty() {
            false
        } else {
            let allele_a: usize = present.iter().map(|&v| (v + 1) as usize).sum();
            let f = allele_a as f64 / (2 * present.len()) as f64;
            f.min(1.0 - f) >= 0.01
        };
        if call_ok && maf_ok {
            oracle_kept.push(j);
        }
    }
    let (_, kept) = filter_markers(&markers, 0.97, 0.01).unwrap();
    assert_eq!(kept, oracle_kept, "kept set disagrees with the brute-force oracle");

    // Median imputation vs an independent sort-based oracle on every column.
    let imputed = impute_median(&markers).unwrap();
    for j in 0..p {
        let mut present: Vec<i8> = values
            .column(j)
            .iter()
            .copied()
            .filter(|&v| v != MISSING_CODE)
            .collect();
        present.sort_unstable();
        let k = present.len();
        let expected = if k % 2 == 1 {
            present[k / 2]
        } else {
            let (lo, hi) = (present[k / 2 - 1], present[k / 2]);
            if lo == hi {
                lo
            } else {
                0
            }
        };
        for i in 0..n {
            let got = imputed.values()[[i, j]];
            if values[[i, j]] == MISSING_CODE {
                assert_eq!(got, expected, "marker {j} imputed {got} vs oracle {expected}");
            } else {
                assert_eq!(got, values[[i, j]], "marker {j}: non-missing entry altered");
            }
        }
    }
    pass(
        3,
        "preprocessing oracle",
        format!("{} of {p} markers kept, matching brute force; all imputations match the sort oracle", kept.len()),
    );
}

// ---------------------------------------------------------------------------
// 4. Lasso oracle
// ---------------------------------------------------------------------------

// Closed-form least squares on [X | 1] via Gauss-Jordan elimination.
fn ols_oracle(design: &Array2<f64>, targets: &Array1<f64>) -> Vec<f64> {
    let n = design.nrows();
    let p = design.ncols() + 1;
    let x = |r: usize, c: usize| -> f64 {
        if c < design.ncols() {
            design[[r, c]]
        } else {
            1.0
        }
    };
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            a[i][j] = (0..n).map(|r| x(r, i) * x(r, j)).sum();
        }
        a[i][p] = (0..n).map(|r| x(r, i) * targets[r]).sum();
    }
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let d = a[col][col];
        for c in col..=p {
            a[col][c] /= d;
        }
        for r in 0..p {
            if r != col {
                let f = a[r][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..p).map(|i| a[i][p]).collect()
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[test]
fn criterion_04_lasso_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x = Array2::from_shape_fn((80, 5), |_| rng.random_range(-2.0..2.0));
    let y = Array1::from_shape_fn(80, |i| {
        1.7 * x[[i, 0]] - 0.9 * x[[i, 3]] + 0.4 + 0.05 * rng.random_range(-1.0..1.0)
    });

    // lambda = 0 matches closed-form least squares within 1e-6.
    let model = fit_lasso(&x, &y, 0.0, 1e-12, 50_000).unwrap();
    let oracle = ols_oracle(&x, &y);
    let mut max_gap: f64 = (model.intercept - oracle[5]).abs();
    for j in 0..5 {
        max_gap = max_gap.max((model.coefficients[j] - oracle[j]).abs());
    }
    assert!(max_gap < 1e-6, "OLS gap {max_gap}");

    // lambda >= lambda_max zeroes all coefficients.
    let lmax = yieldcast_core::baselines::lambda_max(&x, &y).unwrap();
    let zeroed = fit_lasso(&x, &y, lmax, 1e-10, 1000).unwrap();
    assert!(zeroed.coefficients.iter().all(|&b| b == 0.0));

    // Orthonormal design: coefficient j = soft_threshold(OLS_j, lambda).
    let h: [[f64; 3]; 4] = [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ];
    let xo = Array2::from_shape_fn((4, 3), |(r, c)| h[r][c]);
    let yo = Array1::from(vec![2.0, -1.0, 0.5, 3.0]);
    let y_mean = yo.sum() / 4.0;
    let mut ortho_gap: f64 = 0.0;
    for lambda in [0.0, 0.25, 0.7, 1.5] {
        let model = fit_lasso(&xo, &yo, lambda, 1e-13, 50_000).unwrap();
        for j in 0..3 {
            let ols = xo
                .column(j)
                .iter()
                .zip(&yo)
                .map(|(v, t)| v * (t - y_mean))
                .sum::<f64>()
                / 4.0;
            ortho_gap = ortho_gap.max((model.coefficients[j] - soft(ols, lambda)).abs());
        }
    }
    assert!(ortho_gap < 1e-8, "orthonormal gap {ortho_gap}");
    pass(
        4,
        "lasso oracle",
        format!("OLS gap {max_gap:.2e} < 1e-6; lambda_max zeroes; orthonormal gap {ortho_gap:.2e} < 1e-8"),
    );
}

// ---------------------------------------------------------------------------
// 5. Tree oracle
// ---------------------------------------------------------------------------

mod tree_oracle {
    use super::*;
    use yieldcast_core::baselines::tree::Node;
    use yieldcast_core::baselines::TreeModel;

    fn sse_of(targets: &Array1<f64>, rows: &[usize]) -> f64 {
        let m = rows.iter().map(|&r| targets[r]).sum::<f64>() / rows.len() as f64;
        rows.iter().map(|&r| (targets[r] - m) * (targets[r] - m)).sum()
    }

    // Exhaustive (feature, midpoint) search with the (lowest feature, lowest
    // threshold) tie rule.
    fn oracle_best(
        design: &Array2<f64>,
        targets: &Array1<f64>,
        rows: &[usize],
    ) -> Option<(usize, f64)> {
        let parent = sse_of(targets, rows);
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..design.ncols() {
            let mut values: Vec<f64> = rows.iter().map(|&r| design[[r, f]]).collect();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            values.dedup();
            for w in values.windows(2) {
                let threshold = (w[0] + w[1]) / 2.0;
                let left: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&r| design[[r, f]] <= threshold)
                    .collect();
                let right: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&r| design[[r, f]] > threshold)
                    .collect();
                let reduction = parent - sse_of(targets, &left) - sse_of(targets, &right);
                if best.is_none() || reduction > best.unwrap().2 {
                    best = Some((f, threshold, reduction));
                }
            }
        }
        best.filter(|b| b.2 > 0.0).map(|(f, t, _)| (f, t))
    }

    pub fn check_node(
        tree: &TreeModel,
        idx: usize,
        design: &Array2<f64>,
        targets: &Array1<f64>,
        rows: Vec<usize>,
        depth: usize,
        params: &TreeParams,
        splits_checked: &mut usize,
    ) {
        let pure = rows.iter().all(|&r| targets[r] == targets[rows[0]]);
        match &tree.nodes[idx] {
            Node::Leaf { value, n } => {
                assert_eq!(*n, rows.len());
                let mean = rows.iter().map(|&r| targets[r]).sum::<f64>() / rows.len() as f64;
                assert!((value - mean).abs() < 1e-12);
                let must_stop = depth >= params.max_depth
                    || rows.len() < params.min_samples_split
                    || pure
                    || oracle_best(design, targets, &rows).is_none();
                assert!(must_stop, "leaf where the oracle would split");
            }
            Node::Internal {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                assert!(depth < params.max_depth, "split beyond max_depth");
                assert!(rows.len() >= params.min_samples_split);
                let (of, ot) = oracle_best(design, targets, &rows)
                    .expect("internal node must have an oracle split");
                assert_eq!(*feature, of, "split feature disagrees with the oracle");
                assert_eq!(*threshold, ot, "split threshold disagrees with the oracle");
                *splits_checked += 1;
                let lrows: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&r| design[[r, *feature]] <= *threshold)
                    .collect();
                let rrows: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&r| design[[r, *feature]] > *threshold)
                    .collect();
                check_node(tree, *left, design, targets, lrows, depth + 1, params, splits_checked);
                check_node(tree, *right, design, targets, rrows, depth + 1, params, splits_checked);
            }
        }
    }
}

#[test]
fn criterion_05_tree_oracle() {
    let params = TreeParams {
        max_depth: 10,
        min_samples_split: 2,
    };
    let mut total_splits = 0usize;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = Array2::from_shape_fn((50, 5), |_| rng.random_range(-3.0..3.0));
        let y = Array1::from_shape_fn(50, |i| {
            f64::signum(x[[i, 0]]) * 2.0 + x[[i, 2]] + rng.random_range(-0.5..0.5)
        });
        let tree = fit_regression_tree(&x, &y, &params).unwrap();
        assert!(tree.depth() <= 10);
        tree_oracle::check_node(
            &tree,
            0,
            &x,
            &y,
            (0..50).collect(),
            0,
            &params,
            &mut total_splits,
        );
    }
    pass(
        5,
        "tree oracle",
        format!("20 instances, {total_splits} splits, all matching the exhaustive search"),
    );
}

// ---------------------------------------------------------------------------
// 6. Variance identity
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_variance_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..500);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-120.0..180.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-120.0..180.0)).collect();
        let id = variance_identity_check(&y, &c).unwrap();
        worst = worst.max(id.relative_gap);
        assert!(id.relative_gap < 1e-10, "relative gap {}", id.relative_gap);
    }
    pass(
        6,
        "variance identity",
        format!("100 random paired samples, worst relative gap {worst:.2e} < 1e-10"),
    );
}

// ---------------------------------------------------------------------------
// 7. Weather pipeline
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_weather_pipeline() {
    // Count law: 16 years, 1 location, lag 4 -> 12 samples.
    let one_loc = {
        let weather: Vec<(String, i32, Vec<f64>)> = (2001..=2016)
            .map(|y| ("L0".to_string(), y, vec![y as f64; 72]))
            .collect();
        let soil = vec![("L0".to_string(), vec![0.0; 8])];
        Arc::new(yieldcast_core::data::EnvironmentTable::new(weather, soil).unwrap())
    };
    let samples = build_lag_samples(&one_loc, 4).unwrap();
    assert_eq!(samples.n_samples(), 12);

    // 2,247 locations x 11 target years -> 24,717 per variable.
    let many = {
        let mut weather = Vec::new();
        let mut soil = Vec::new();
        for l in 0..2247 {
            let id = format!("L{l}");
            soil.push((id.clone(), vec![0.0; 8]));
            for y in 2001..=2015 {
                weather.push((id.clone(), y, vec![(l + y as usize) as f64 * 1e-3; 72]));
            }
        }
        Arc::new(yieldcast_core::data::EnvironmentTable::new(weather, soil).unwrap())
    };
    let pooled = build_lag_samples(&many, 4).unwrap();
    assert_eq!(pooled.n_samples(), 24_717);

    // Backtest on autocorrelated synthetic weather: the forecaster must beat
    // the repeat-last-year naive baseline.
    let seed = 11u64;
    let cfg = SynthConfig {
        n_hybrids: 2,
        n_locations: 60,
        year_start: 2001,
        year_end: 2016,
        p_markers: 2,
        n_causal_markers: 1,
        weather_persistence: 0.3,
        seed,
        ..SynthConfig::default()
    };
    let out = generate_synthetic(&cfg).unwrap();
    let env = Arc::new(out.env);
    let train_env = Arc::new(env.with_years_until(2015).unwrap());
    let train_samples = build_lag_samples(&train_env, 4).unwrap();
    let config = TrainConfig {
        max_iterations: 8000,
        ..default_weather_config(seed)
    };
    let forecaster = train_forecasters(&train_samples, 10, &config).unwrap();
    let report = backtest(&forecaster, &env, 2016).unwrap();
    assert!(
        report.forecast_rmse < report.naive_rmse,
        "forecast RMSE {} not below naive {}",
        report.forecast_rmse,
        report.naive_rmse
    );
    pass(
        7,
        "weather pipeline",
        format!(
            "count law 12 and 24,717 exact; backtest RMSE {:.4} < naive {:.4}",
            report.forecast_rmse, report.naive_rmse
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. End-to-end model ordering (DNN vs Lasso)
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_dnn_beats_lasso() {
    let t0 = Instant::now();
    let seed = 2024u64;
    let cfg = SynthConfig {
        n_hybrids: 100,
        n_locations: 25,
        year_start: 2015,
        year_end: 2016,
        p_markers: 60,
        missing_rate: 0.02,
        n_causal_markers: 8,
        gxe_strength: 2.0,
        noise_sd: 2.0,
        seed,
        allele_freq_range: (0.15, 0.5),
        weather_persistence: 0.6,
        marker_effect_sd: 2.0,
        weather_effect: 10.0,
        soil_effect: 5.0,
        base_yield: 110.0,
    };
    let out = generate_synthetic(&cfg).unwrap();
    let dataset = join_trials(out.markers, out.env, out.performance).dataset;
    assert_eq!(dataset.n(), 5000);
    let split = split_by_year(
        &dataset,
        SplitRule {
            cutoff_year: 2016,
            validation_fraction: 0.5,
            seed,
        },
    )
    .unwrap();
    let opts = PreprocessOptions::default();

    let lasso = fit_dual_lasso(&split.train, &LassoSettings::default(), &opts, None).unwrap();
    let lasso_val = lasso.predict_triplets(&split.validation).unwrap();
    let lasso_rmse = metrics(
        lasso_val.yield_pred.as_slice().unwrap(),
        split.validation.yields().as_slice().unwrap(),
    )
    .unwrap()
    .rmse;

    let spec = NetworkSpec::desk(1); // input width comes from the fit
    let config = TrainConfig {
        max_iterations: 8000,
        ..TrainConfig::desk(seed)
    };
    let pair = train_pair(&split.train, &spec, &config, &opts, None).unwrap();
    let dnn_val = predict_triplet(&pair, &split.validation).unwrap();
    let dnn_rmse = metrics(
        dnn_val.yield_pred.as_slice().unwrap(),
        split.validation.yields().as_slice().unwrap(),
    )
    .unwrap()
    .rmse;

    let elapsed = t0.elapsed();
    assert!(
        dnn_rmse < lasso_rmse,
        "DNN validation RMSE {dnn_rmse} not below Lasso {lasso_rmse}"
    );
    assert!(elapsed.as_secs() < 900, "runtime {elapsed:?} exceeds 15 min");
    pass(
        8,
        "end-to-end ordering",
        format!("n=5000: DNN val RMSE {dnn_rmse:.4} < Lasso {lasso_rmse:.4}; {elapsed:.1?}"),
    );
}

// ---------------------------------------------------------------------------
// 9. Ablation ordering
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_ablation_ordering() {
    let seed = 501u64;
    let cfg = SynthConfig {
        n_hybrids: 100,
        n_locations: 24,
        year_start: 2015,
        year_end: 2016,
        p_markers: 40,
        missing_rate: 0.02,
        n_causal_markers: 8,
        gxe_strength: 0.0,
        noise_sd: 2.0,
        seed,
        allele_freq_range: (0.2, 0.5),
        weather_persistence: 0.6,
        marker_effect_sd: 2.6,
        weather_effect: 10.0,
        soil_effect: 8.0,
        base_yield: 110.0,
    };
    let out = generate_synthetic(&cfg).unwrap();
    let dataset = join_trials(out.markers, out.env, out.performance).dataset;
    let split = split_by_year(
        &dataset,
        SplitRule {
            cutoff_year: 2016,
            validation_fraction: 0.5,
            seed,
        },
    )
    .unwrap();
    let spec = NetworkSpec {
        hidden_layers: 4,
        hidden_width: 40,
        ..NetworkSpec::desk(1)
    };
    let config = TrainConfig {
        max_iterations: 6000,
        ..TrainConfig::desk(seed)
    };
    let opts = PreprocessOptions::default();
    let rmse_of = |source: AblationSource| {
        ablation_single_source(&split.train, &split.validation, source, &spec, &config, &opts)
            .unwrap()
            .val_rmse
    };
    let g = rmse_of(AblationSource::Genotype);
    let s = rmse_of(AblationSource::Soil);
    let w = rmse_of(AblationSource::Weather);
    let avg = rmse_of(AblationSource::Average);
    assert!(w < g, "DNN(W) {w} not below DNN(G) {g}");
    assert!(s < g, "DNN(S) {s} not below DNN(G) {g}");
    assert!(g < avg, "DNN(G) {g} not below Average {avg}");
    pass(
        9,
        "ablation ordering",
        format!("DNN(W) {w:.3} and DNN(S) {s:.3} < DNN(G) {g:.3} < Average {avg:.3}"),
    );
}

// ---------------------------------------------------------------------------
// 10. Feature selection recovery
// ---------------------------------------------------------------------------

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// P(X >= observed) for X ~ Hypergeometric(population, successes, draws).
fn hypergeometric_tail(population: usize, successes: usize, draws: usize, observed: usize) -> f64 {
    let mut tail = 0.0;
    for i in observed..=successes.min(draws) {
        let ln_p = ln_choose(successes, i) + ln_choose(population - successes, draws - i)
            - ln_choose(population, draws);
        tail += ln_p.exp();
    }
    tail
}

#[test]
fn criterion_10_feature_selection_recovery() {
    let seed = 907u64;
    let cfg = SynthConfig {
        n_hybrids: 800,
        n_locations: 8,
        year_start: 2015,
        year_end: 2016,
        p_markers: 627,
        missing_rate: 0.0,
        n_causal_markers: 10,
        gxe_strength: 0.0,
        noise_sd: 1.5,
        seed,
        allele_freq_range: (0.1, 0.5),
        weather_persistence: 0.6,
        marker_effect_sd: 3.0,
        weather_effect: 6.0,
        soil_effect: 3.0,
        base_yield: 110.0,
    };
    let out = generate_synthetic(&cfg).unwrap();
    let planted: Vec<usize> = out
        .ground_truth
        .causal_markers
        .iter()
        .map(|&(i, _)| i)
        .collect();
    let dataset = join_trials(out.markers, out.env, out.performance).dataset;
    let split = split_by_year(
        &dataset,
        SplitRule {
            cutoff_year: 2016,
            validation_fraction: 0.5,
            seed,
        },
    )
    .unwrap();
    let opts = PreprocessOptions::default();
    let spec = NetworkSpec {
        hidden_layers: 3,
        hidden_width: 40,
        ..NetworkSpec::desk(1)
    };
    let config = TrainConfig {
        max_iterations: 8000,
        l1_lambda: 1e-3,
        ..TrainConfig::desk(seed)
    };
    let pair = train_pair(&split.train, &spec, &config, &opts, None).unwrap();
    assert_eq!(pair.fit.kept_markers.len(), 627, "all 627 markers must survive the filters");

    let val_design = assemble_design(&split.validation, Some(&pair.fit), &opts).unwrap();
    let mask =
        activated_neuron_mask(&pair.yield_net, &pair.spec, &val_design.design, 0.0).unwrap();
    let names = pair.fit.feature_names(split.validation.markers());
    let groups: Vec<FeatureGroup> = (0..pair.fit.n_features())
        .map(|c| pair.fit.feature_group(c))
        .collect();
    let report = effects_via_guided_backprop(
        &pair.yield_net,
        &pair.spec,
        &val_design.design,
        &mask,
        names,
        groups,
        0.0,
    )
    .unwrap();
    let selected = select_top_features(&report, 50, 20).unwrap();
    let selected_markers: Vec<usize> = selected
        .iter()
        .copied()
        .filter(|&c| c < pair.fit.kept_markers.len())
        .map(|c| pair.fit.kept_markers[c])
        .collect();
    assert_eq!(selected_markers.len(), 50);
    let overlap = planted
        .iter()
        .filter(|t| selected_markers.contains(t))
        .count();
    let p_value = hypergeometric_tail(627, 10, 50, overlap);
    assert!(
        p_value < 0.01,
        "overlap {overlap}/10 has hypergeometric tail p {p_value} >= 0.01"
    );

    // Retrain on the selected 50 + 20 subset; validation yield RMSE must stay
    // within 15% of the full model's.
    let sub_fit = pair.fit.restrict_to_design_columns(&selected).unwrap();
    let sub_pair = train_pair(&split.train, &spec, &config, &opts, Some(&sub_fit)).unwrap();
    let truth = split.validation.yields();
    let full_rmse = metrics(
        predict_triplet(&pair, &split.validation)
            .unwrap()
            .yield_pred
            .as_slice()
            .unwrap(),
        truth.as_slice().unwrap(),
    )
    .unwrap()
    .rmse;
    let sub_rmse = metrics(
        predict_triplet(&sub_pair, &split.validation)
            .unwrap()
            .yield_pred
            .as_slice()
            .unwrap(),
        truth.as_slice().unwrap(),
    )
    .unwrap()
    .rmse;
    assert!(
        sub_rmse <= full_rmse * 1.15,
        "subset RMSE {sub_rmse} above 115% of full {full_rmse}"
    );
    pass(
        10,
        "feature selection recovery",
        format!(
            "overlap {overlap}/10 (p {p_value:.2e} < 0.01); subset RMSE {sub_rmse:.4} vs full {full_rmse:.4}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 11. Weather substitution degradation
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_weather_substitution() {
    let seed = 333u64;
    let cfg = SynthConfig {
        n_hybrids: 30,
        n_locations: 25,
        year_start: 2001,
        year_end: 2016,
        p_markers: 30,
        missing_rate: 0.02,
        n_causal_markers: 6,
        gxe_strength: 1.5,
        noise_sd: 2.0,
        seed,
        allele_freq_range: (0.2, 0.5),
        weather_persistence: 0.3,
        marker_effect_sd: 1.5,
        weather_effect: 10.0,
        soil_effect: 4.0,
        base_yield: 110.0,
    };
    let out = generate_synthetic(&cfg).unwrap();
    let env = Arc::new(out.env.clone());
    let dataset = join_trials(out.markers, out.env, out.performance).dataset;
    let split = split_by_year(
        &dataset,
        SplitRule {
            cutoff_year: 2016,
            validation_fraction: 0.5,
            seed,
        },
    )
    .unwrap();

    let train_env = Arc::new(env.with_years_until(2015).unwrap());
    let samples = build_lag_samples(&train_env, 4).unwrap();
    let wconfig = TrainConfig {
        max_iterations: 6000,
        ..default_weather_config(seed)
    };
    let forecaster = train_forecasters(&samples, 10, &wconfig).unwrap();
    let forecast = forecast_year(&forecaster, &env, 2016).unwrap();

    let spec = NetworkSpec {
        hidden_layers: 4,
        hidden_width: 40,
        ..NetworkSpec::desk(1)
    };
    let config = TrainConfig {
        max_iterations: 6000,
        ..TrainConfig::desk(seed)
    };
    let pair = train_pair(&split.train, &spec, &config, &PreprocessOptions::default(), None)
        .unwrap();

    let truth = split.validation.yields();
    let rmse_true = metrics(
        predict_triplet(&pair, &split.validation)
            .unwrap()
            .yield_pred
            .as_slice()
            .unwrap(),
        truth.as_slice().unwrap(),
    )
    .unwrap()
    .rmse;

    let swapped_env = env.with_weather_replaced(&forecast.weather_rows()).unwrap();
    let swapped = split.validation.with_env(Arc::new(swapped_env)).unwrap();
    let rmse_forecast = metrics(
        predict_triplet(&pair, &swapped)
            .unwrap()
            .yield_pred
            .as_slice()
            .unwrap(),
        truth.as_slice().unwrap(),
    )
    .unwrap()
    .rmse;

    assert!(
        rmse_forecast >= rmse_true * 0.999,
        "forecast weather improved RMSE: {rmse_forecast} vs {rmse_true}"
    );
    pass(
        11,
        "weather substitution",
        format!("true-weather RMSE {rmse_true:.4} <= forecast-weather RMSE {rmse_forecast:.4}"),
    );
}

// ---------------------------------------------------------------------------
// 12. Determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_12_determinism() {
    let cfg = SynthConfig {
        n_hybrids: 40,
        n_locations: 6,
        year_start: 2012,
        year_end: 2016,
        p_markers: 30,
        missing_rate: 0.1,
        n_causal_markers: 4,
        seed: 99,
        ..SynthConfig::default()
    };

    // Stage 1: generation writes byte-identical files.
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    write_synthetic(&generate_synthetic(&cfg).unwrap(), dir_a.path()).unwrap();
    write_synthetic(&generate_synthetic(&cfg).unwrap(), dir_b.path()).unwrap();
    for name in [
        "genotype.csv",
        "weather.csv",
        "soil.csv",
        "performance.csv",
        "ground_truth.csv",
    ] {
        assert_eq!(
            std::fs::read(dir_a.path().join(name)).unwrap(),
            std::fs::read(dir_b.path().join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }

    // Stage 2: ingestion + preprocessing fit serializes identically.
    let load = |dir: &std::path::Path| {
        let (m, e, p) = yieldcast_core::data::ingest_tables(
            &dir.join("genotype.csv"),
            &dir.join("weather.csv"),
            &dir.join("soil.csv"),
            &dir.join("performance.csv"),
        )
        .unwrap();
        join_trials(m, e, p).dataset
    };
    let dataset_a = load(dir_a.path());
    let dataset_b = load(dir_b.path());
    let rule = SplitRule {
        cutoff_year: 2016,
        validation_fraction: 0.4,
        seed: 7,
    };
    let split_a = split_by_year(&dataset_a, rule).unwrap();
    let split_b = split_by_year(&dataset_b, rule).unwrap();
    let opts = PreprocessOptions::default();
    let fit_a = assemble_design(&split_a.train, None, &opts).unwrap().fit;
    let fit_b = assemble_design(&split_b.train, None, &opts).unwrap().fit;
    let fa = dir_a.path().join("fit.json");
    let fb = dir_b.path().join("fit.json");
    fit_a.save(&fa).unwrap();
    fit_b.save(&fb).unwrap();
    assert_eq!(
        std::fs::read(&fa).unwrap(),
        std::fs::read(&fb).unwrap(),
        "preprocess fit differs"
    );

    // Stage 3: training produces byte-identical checkpoints.
    let spec = NetworkSpec {
        hidden_layers: 2,
        hidden_width: 8,
        ..NetworkSpec::desk(fit_a.n_features())
    };
    let config = TrainConfig {
        max_iterations: 300,
        ..TrainConfig::desk(5)
    };
    let design_a = assemble_design(&split_a.train, Some(&fit_a), &opts).unwrap();
    let design_b = assemble_design(&split_b.train, Some(&fit_b), &opts).unwrap();
    let (net_a, _) =
        train_network(&spec, &config, &design_a.design, &split_a.train.yields(), None).unwrap();
    let (net_b, _) =
        train_network(&spec, &config, &design_b.design, &split_b.train.yields(), None).unwrap();
    let ca = dir_a.path().join("net.json");
    let cb = dir_b.path().join("net.json");
    Checkpoint::new(spec, config, net_a).save(&ca).unwrap();
    Checkpoint::new(spec, config, net_b).save(&cb).unwrap();
    assert_eq!(
        std::fs::read(&ca).unwrap(),
        std::fs::read(&cb).unwrap(),
        "checkpoints differ"
    );

    // Stage 4: reports assemble byte-identically.
    let loaded = Checkpoint::load(&ca).unwrap();
    let preds = yieldcast_core::nn::predict(&loaded.params, &loaded.spec, &design_a.design).unwrap();
    let row = yieldcast_core::evaluate::metrics_row(
        "DNN",
        yieldcast_core::evaluate::Response::Yield,
        preds.as_slice().unwrap(),
        split_a.train.yields().as_slice().unwrap(),
        preds.as_slice().unwrap(),
        split_a.train.yields().as_slice().unwrap(),
    )
    .unwrap();
    let inputs = yieldcast_core::evaluate::ReportInputs {
        metrics: vec![row],
        ..Default::default()
    };
    let ra = dir_a.path().join("report");
    let rb = dir_b.path().join("report");
    yieldcast_core::evaluate::build_report(&inputs, &ra).unwrap();
    yieldcast_core::evaluate::build_report(&inputs, &rb).unwrap();
    for name in ["metrics.csv", "summary.txt"] {
        assert_eq!(
            std::fs::read(ra.join(name)).unwrap(),
            std::fs::read(rb.join(name)).unwrap(),
            "report {name} differs"
        );
    }
    pass(
        12,
        "determinism",
        "generation, ingestion, preprocessing, training, and reports are bitwise-stable under fixed seeds".to_string(),
    );
}
