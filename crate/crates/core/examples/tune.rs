// Scratch harness for sizing the acceptance configurations. Not shipped.

use std::sync::Arc;
use std::time::Instant;

use ndarray::Array1;
use yieldcast_core::baselines::{fit_dual_lasso, LassoSettings};
use yieldcast_core::data::{join_trials, split_by_year, SplitRule};
use yieldcast_core::evaluate::metrics;
use yieldcast_core::nn::{adam_update, lr_at, NetworkSpec, TrainConfig};
use yieldcast_core::preprocess::PreprocessOptions;
use yieldcast_core::synth::{generate_synthetic, SynthConfig};
use yieldcast_core::weather::{
    backtest, build_lag_samples, default_weather_config, train_forecasters,
};
use yieldcast_core::yield_model::{predict_triplet, train_pair};

fn adam_quadratic() {
    // 10-d convex quadratic: f(x) = sum a_i (x_i - c_i)^2.
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
    let mut hit = None;
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
        if err < 1e-6 && hit.is_none() {
            hit = Some((it, err));
            break;
        }
    }
    println!("adam quadratic: hit {hit:?}");
}

fn weather_margin() {
    for (persistence, iters, seed) in [(0.3, 8000usize, 11u64), (0.3, 8000, 12), (0.45, 16000, 11), (0.3, 8000, 14)] {
        let cfg = SynthConfig {
            n_hybrids: 2,
            n_locations: 60,
            year_start: 2001,
            year_end: 2016,
            p_markers: 2,
            n_causal_markers: 1,
            weather_persistence: persistence,
            seed,
            ..SynthConfig::default()
        };
        let out = generate_synthetic(&cfg).unwrap();
        let env = Arc::new(out.env);
        let t0 = Instant::now();
        let train_env = Arc::new(env.with_years_until(2015).unwrap());
        let samples = build_lag_samples(&train_env, 4).unwrap();
        let config = TrainConfig {
            max_iterations: iters,
            ..default_weather_config(seed)
        };
        let fc = train_forecasters(&samples, 10, &config).unwrap();
        let report = backtest(&fc, &env, 2016).unwrap();
        println!(
            "weather persistence {persistence} iters {iters} seed {seed}: forecast {:.4} naive {:.4} ratio {:.3} ({} samples/var, {:.1?})",
            report.forecast_rmse,
            report.naive_rmse,
            report.naive_rmse / report.forecast_rmse,
            samples.n_samples(),
            t0.elapsed()
        );
    }
}

fn ablation_ordering() {
    use yieldcast_core::yield_model::{ablation_single_source, AblationSource};
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
        SplitRule { cutoff_year: 2016, validation_fraction: 0.5, seed },
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
    let t0 = Instant::now();
    for source in [
        AblationSource::Genotype,
        AblationSource::Soil,
        AblationSource::Weather,
        AblationSource::Average,
    ] {
        let row =
            ablation_single_source(&split.train, &split.validation, source, &spec, &config, &opts)
                .unwrap();
        println!(
            "  {:<8} train {:.4} val {:.4} corr {:.2} ({:.0?})",
            row.model, row.train_rmse, row.val_rmse, row.val_corr_pct, t0.elapsed()
        );
    }
}

fn feature_recovery() {
    use yieldcast_core::feature_select::{
        activated_neuron_mask, effects_via_guided_backprop, select_top_features,
    };
    use yieldcast_core::preprocess::assemble_design;
    use yieldcast_core::synth::FeatureGroup;

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
    let truth: Vec<usize> = out.ground_truth.causal_markers.iter().map(|&(i, _)| i).collect();
    let dataset = join_trials(out.markers, out.env, out.performance).dataset;
    let split = split_by_year(
        &dataset,
        SplitRule { cutoff_year: 2016, validation_fraction: 0.5, seed },
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
    let t0 = Instant::now();
    let pair = train_pair(&split.train, &spec, &config, &opts, None).unwrap();
    println!("  pair trained ({:?})", t0.elapsed());
    let kept = pair.fit.kept_markers.len();
    println!("  kept markers: {kept}");

    let val_design = assemble_design(&split.validation, Some(&pair.fit), &opts).unwrap();
    let mask = activated_neuron_mask(&pair.yield_net, &pair.spec, &val_design.design, 0.0).unwrap();
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
    // Diagnostics: first-layer weight mass on causal vs noise markers.
    let causal_cols: Vec<usize> = (0..pair.fit.kept_markers.len())
        .filter(|&c| truth.contains(&pair.fit.kept_markers[c]))
        .collect();
    let w1 = &pair.yield_net.hidden[0].dense.w;
    let col_mass = |c: usize| -> f64 {
        w1.iter().map(|w| w.column(c).iter().map(|v| v.abs()).sum::<f64>()).sum()
    };
    let causal_mass: f64 = causal_cols.iter().map(|&c| col_mass(c)).sum::<f64>() / causal_cols.len() as f64;
    let noise_cols: Vec<usize> = (0..pair.fit.kept_markers.len()).filter(|c| !causal_cols.contains(c)).collect();
    let noise_mass: f64 = noise_cols.iter().map(|&c| col_mass(c)).sum::<f64>() / noise_cols.len() as f64;
    println!("  mean |W1| mass: causal {causal_mass:.4} noise {noise_mass:.4}");
    // Guided effect stats
    let causal_fx: Vec<f64> = causal_cols.iter().map(|&c| report.raw[c]).collect();
    let mut noise_fx: Vec<f64> = noise_cols.iter().map(|&c| report.raw[c]).collect();
    noise_fx.sort_by(|a, b| b.partial_cmp(a).unwrap());
    println!("  guided raw: causal {:?}", causal_fx.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
    println!("  guided raw: top noise {:?}", noise_fx.iter().take(10).map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
    // FD sensitivity of the prediction wrt each causal + top-noise column
    let sens = |c: usize| -> f64 {
        let mut up = val_design.design.clone();
        up.column_mut(c).mapv_inplace(|v| v + 0.5);
        let mut dn = val_design.design.clone();
        dn.column_mut(c).mapv_inplace(|v| v - 0.5);
        let pu = yieldcast_core::nn::predict(&pair.yield_net, &pair.spec, &up).unwrap();
        let pd = yieldcast_core::nn::predict(&pair.yield_net, &pair.spec, &dn).unwrap();
        pu.iter().zip(pd.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / pu.len() as f64
    };
    let causal_sens: Vec<f64> = causal_cols.iter().map(|&c| sens(c)).collect();
    println!("  fd sensitivity causal: {:?}", causal_sens.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
    let mut noise_sens: Vec<(usize, f64)> = noise_cols.iter().take(100).map(|&c| (c, sens(c))).collect();
    noise_sens.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    println!("  fd sensitivity top noise (of first 100): {:?}", noise_sens.iter().take(5).map(|(c, v)| (*c, (v*1000.0).round()/1000.0)).collect::<Vec<_>>());
    let selected = select_top_features(&report, 50, 20).unwrap();
    let marker_cols: Vec<usize> = selected
        .iter()
        .copied()
        .filter(|&c| c < pair.fit.kept_markers.len())
        .collect();
    let selected_orig: Vec<usize> = marker_cols.iter().map(|&c| pair.fit.kept_markers[c]).collect();
    let overlap = truth.iter().filter(|t| selected_orig.contains(t)).count();
    println!("  overlap with planted causal set: {overlap}/10");

    // Subset retraining.
    let sub_fit = pair.fit.restrict_to_design_columns(&selected).unwrap();
    let sub_pair = train_pair(&split.train, &spec, &config, &opts, Some(&sub_fit)).unwrap();
    let full_val = predict_triplet(&pair, &split.validation).unwrap();
    let sub_val = predict_triplet(&sub_pair, &split.validation).unwrap();
    let truth_y = split.validation.yields();
    let full_rmse = metrics(full_val.yield_pred.as_slice().unwrap(), truth_y.as_slice().unwrap())
        .unwrap()
        .rmse;
    let sub_rmse = metrics(sub_val.yield_pred.as_slice().unwrap(), truth_y.as_slice().unwrap())
        .unwrap()
        .rmse;
    println!(
        "  full val rmse {:.4}, subset val rmse {:.4}, ratio {:.3} ({:.0?})",
        full_rmse,
        sub_rmse,
        sub_rmse / full_rmse,
        t0.elapsed()
    );
}

fn dnn_vs_lasso() {
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
    println!("dnn_vs_lasso: n = {}", dataset.n());
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

    let t0 = Instant::now();
    let lasso = fit_dual_lasso(&split.train, &LassoSettings::default(), &opts, None).unwrap();
    let lasso_val = lasso.predict_triplets(&split.validation).unwrap();
    let lasso_rmse = metrics(
        lasso_val.yield_pred.as_slice().unwrap(),
        split.validation.yields().as_slice().unwrap(),
    )
    .unwrap()
    .rmse;
    println!("  lasso val yield rmse {:.4} ({:.1?})", lasso_rmse, t0.elapsed());

    for (layers, width, iters) in [(4usize, 40usize, 8000usize), (6, 50, 8000)] {
        let spec = NetworkSpec {
            input_dim: 1,
            hidden_layers: layers,
            hidden_width: width,
            ..NetworkSpec::desk(1)
        };
        let config = TrainConfig {
            max_iterations: iters,
            ..TrainConfig::desk(seed)
        };
        let t0 = Instant::now();
        let pair = train_pair(&split.train, &spec, &config, &opts, None).unwrap();
        let val = predict_triplet(&pair, &split.validation).unwrap();
        let train_trip = predict_triplet(&pair, &split.train).unwrap();
        let rmse = metrics(
            val.yield_pred.as_slice().unwrap(),
            split.validation.yields().as_slice().unwrap(),
        )
        .unwrap()
        .rmse;
        let train_rmse = metrics(
            train_trip.yield_pred.as_slice().unwrap(),
            split.train.yields().as_slice().unwrap(),
        )
        .unwrap()
        .rmse;
        println!(
            "  dnn {layers}x{width} iters {iters}: train {:.4} val {:.4} vs lasso {:.4} ({:.1?})",
            train_rmse,
            rmse,
            lasso_rmse,
            t0.elapsed()
        );
    }
}

fn weather_substitution() {
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
    println!("  n = {}", dataset.n());
    let split = split_by_year(
        &dataset,
        SplitRule { cutoff_year: 2016, validation_fraction: 0.5, seed },
    )
    .unwrap();
    let t0 = Instant::now();

    // Forecasters trained on weather through 2015 only.
    let train_env = Arc::new(env.with_years_until(2015).unwrap());
    let samples = build_lag_samples(&train_env, 4).unwrap();
    let wconfig = TrainConfig { max_iterations: 6000, ..default_weather_config(seed) };
    let fc = train_forecasters(&samples, 10, &wconfig).unwrap();
    let forecast = yieldcast_core::weather::forecast_year(&fc, &env, 2016).unwrap();
    println!("  forecasters done ({:.0?})", t0.elapsed());

    let spec = NetworkSpec { hidden_layers: 4, hidden_width: 40, ..NetworkSpec::desk(1) };
    let config = TrainConfig { max_iterations: 6000, ..TrainConfig::desk(seed) };
    let opts = PreprocessOptions::default();
    let pair = train_pair(&split.train, &spec, &config, &opts, None).unwrap();
    println!("  pair done ({:.0?})", t0.elapsed());

    let true_val = predict_triplet(&pair, &split.validation).unwrap();
    let swapped_env = env.with_weather_replaced(&forecast.weather_rows()).unwrap();
    let swapped = split.validation.with_env(Arc::new(swapped_env)).unwrap();
    let fc_val = predict_triplet(&pair, &swapped).unwrap();

    let truth = split.validation.yields();
    let rmse_true = metrics(true_val.yield_pred.as_slice().unwrap(), truth.as_slice().unwrap()).unwrap().rmse;
    let rmse_fc = metrics(fc_val.yield_pred.as_slice().unwrap(), truth.as_slice().unwrap()).unwrap().rmse;
    println!(
        "  val yield rmse: true weather {:.4}, forecast weather {:.4} (degradation {:.1}%) ({:.0?})",
        rmse_true,
        rmse_fc,
        (rmse_fc / rmse_true - 1.0) * 100.0,
        t0.elapsed()
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("all");
    if which == "adam" || which == "all" {
        adam_quadratic();
    }
    if which == "weather" || which == "all" {
        weather_margin();
    }
    if which == "dnn" || which == "all" {
        dnn_vs_lasso();
    }
    if which == "ablate" || which == "all" {
        ablation_ordering();
    }
    if which == "select" || which == "all" {
        feature_recovery();
    }
    if which == "swap" || which == "all" {
        weather_substitution();
    }
    let _ = Array1::<f64>::zeros(1);
}
