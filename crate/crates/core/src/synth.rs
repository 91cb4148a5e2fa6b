//! Seeded synthetic dataset generator with planted, known ground-truth
//! effects.
//!
//! Yields are built from linear marker effects, saturating (tanh) weather and
//! soil responses, optional marker-by-weather interaction products, and
//! Gaussian noise. Weather follows an AR(1) process per location so a lagged
//! forecaster has learnable structure. The generator records everything it
//! used, so noiseless yields can be recomputed exactly.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{
    write_genotype_csv, write_performance_csv, write_soil_csv, write_weather_csv,
    EnvironmentTable, MarkerMatrix, PerfRecord, PerformanceTable, MISSING_CODE, SOIL_VARS,
    WEATHER_VARS,
};
use crate::derive_seed;
use crate::error::{Error, Result};

/// Generator configuration. Counts shape the dataset; the effect knobs set
/// how much yield variance each feature group carries.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub n_hybrids: usize,
    pub n_locations: usize,
    pub year_start: i32,
    pub year_end: i32,
    pub p_markers: usize,
    pub missing_rate: f64,
    pub n_causal_markers: usize,
    pub gxe_strength: f64,
    pub noise_sd: f64,
    pub seed: u64,
    /// Per-marker allele-A frequency is drawn uniformly from this range.
    pub allele_freq_range: (f64, f64),
    /// AR(1) persistence of each weather variable within a location.
    pub weather_persistence: f64,
    /// Scale of causal marker coefficients.
    pub marker_effect_sd: f64,
    /// Amplitude of the saturating weather responses.
    pub weather_effect: f64,
    /// Amplitude of the saturating soil responses.
    pub soil_effect: f64,
    pub base_yield: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_hybrids: 200,
            n_locations: 20,
            year_start: 2010,
            year_end: 2016,
            p_markers: 1000,
            missing_rate: 0.37,
            n_causal_markers: 10,
            gxe_strength: 1.0,
            noise_sd: 2.0,
            seed: 0,
            allele_freq_range: (0.002, 0.5),
            weather_persistence: 0.6,
            marker_effect_sd: 1.0,
            weather_effect: 8.0,
            soil_effect: 4.0,
            base_yield: 110.0,
        }
    }
}

impl SynthConfig {
    pub fn n_years(&self) -> usize {
        (self.year_end - self.year_start + 1) as usize
    }

    fn validate(&self) -> Result<()> {
        if self.n_hybrids == 0
            || self.n_locations == 0
            || self.p_markers == 0
            || self.n_years() == 0
        {
            return Err(Error::InvalidConfig("all counts must be positive".into()));
        }
        if self.year_end < self.year_start {
            return Err(Error::InvalidConfig("year_end before year_start".into()));
        }
        if self.n_causal_markers > self.p_markers {
            return Err(Error::InvalidConfig(format!(
                "n_causal_markers {} exceeds p_markers {}",
                self.n_causal_markers, self.p_markers
            )));
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return Err(Error::InvalidConfig("missing_rate outside [0, 1]".into()));
        }
        if self.gxe_strength < 0.0 || self.noise_sd < 0.0 {
            return Err(Error::InvalidConfig(
                "gxe_strength and noise_sd must be non-negative".into(),
            ));
        }
        let (lo, hi) = self.allele_freq_range;
        if !(0.0 < lo && lo <= hi && hi <= 0.5) {
            return Err(Error::InvalidConfig(
                "allele_freq_range must satisfy 0 < lo <= hi <= 0.5".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.weather_persistence) {
            return Err(Error::InvalidConfig(
                "weather_persistence must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Which feature group a planted effect belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FeatureGroup {
    Marker,
    Weather,
    Soil,
}

impl std::fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureGroup::Marker => f.write_str("marker"),
            FeatureGroup::Weather => f.write_str("weather"),
            FeatureGroup::Soil => f.write_str("soil"),
        }
    }
}

/// Saturating (tanh) response of yield to one environmental variable.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SaturatingTerm {
    pub group: FeatureGroup,
    pub var_idx: usize,
    pub amplitude: f64,
    pub center: f64,
    pub scale: f64,
}

impl SaturatingTerm {
    fn eval(&self, value: f64) -> f64 {
        self.amplitude * ((value - self.center) / self.scale).tanh()
    }
}

/// Marker-by-weather interaction: coeff * genotype * tanh(standardized weather).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GxeTerm {
    pub marker_idx: usize,
    pub weather_idx: usize,
    pub coeff: f64,
    pub weather_center: f64,
    pub weather_scale: f64,
}

impl GxeTerm {
    fn eval(&self, genotype: f64, weather: f64) -> f64 {
        self.coeff * genotype * ((weather - self.weather_center) / self.weather_scale).tanh()
    }
}

/// Everything the generator used, recorded exactly.
///
/// Holds the unmasked codes of the causal markers so noiseless yields remain
/// recomputable after missingness masking.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GroundTruth {
    pub base_yield: f64,
    /// (marker index, coefficient per genotype code).
    pub causal_markers: Vec<(usize, f64)>,
    pub env_terms: Vec<SaturatingTerm>,
    pub gxe_terms: Vec<GxeTerm>,
    /// True (unmasked) codes of the causal markers, n_hybrids x n_causal.
    pub causal_true_codes: Array2<i8>,
}

impl GroundTruth {
    /// Exact noiseless yield for one hybrid in one environment.
    pub fn noiseless_yield(
        &self,
        hybrid_idx: usize,
        weather: ArrayView1<'_, f64>,
        soil: ArrayView1<'_, f64>,
    ) -> f64 {
        let mut y = self.base_yield;
        for (c, (_, coeff)) in self.causal_markers.iter().enumerate() {
            y += coeff * f64::from(self.causal_true_codes[[hybrid_idx, c]]);
        }
        for term in &self.env_terms {
            let value = match term.group {
                FeatureGroup::Weather => weather[term.var_idx],
                FeatureGroup::Soil => soil[term.var_idx],
                FeatureGroup::Marker => unreachable!("env terms are environmental"),
            };
            y += term.eval(value);
        }
        for term in &self.gxe_terms {
            let c = self
                .causal_markers
                .iter()
                .position(|(idx, _)| *idx == term.marker_idx)
                .expect("gxe markers are causal");
            let g = f64::from(self.causal_true_codes[[hybrid_idx, c]]);
            y += term.eval(g, weather[term.weather_idx]);
        }
        y
    }
}

/// Full generator output; tables follow the ingestion schemas.
#[derive(Debug)]
pub struct SynthOutput {
    pub markers: MarkerMatrix,
    pub env: EnvironmentTable,
    pub performance: PerformanceTable,
    pub ground_truth: GroundTruth,
}

/// Generate a synthetic dataset. Trials are the full product of hybrids,
/// locations, and years; check yield is the exact per-(location, year) mean
/// of generated yields across hybrids.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;

    let n_h = config.n_hybrids;
    let n_l = config.n_locations;
    let n_y = config.n_years();
    let p = config.p_markers;

    // True genotype codes under per-marker Hardy-Weinberg frequencies.
    let mut rng_geno = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "genotype"));
    let (f_lo, f_hi) = config.allele_freq_range;
    let mut true_codes = Array2::<i8>::zeros((n_h, p));
    for j in 0..p {
        let f: f64 = rng_geno.random_range(f_lo..=f_hi);
        let p_aa_major = (1.0 - f) * (1.0 - f);
        let p_het = 2.0 * f * (1.0 - f);
        for i in 0..n_h {
            let u: f64 = rng_geno.random();
            true_codes[[i, j]] = if u < p_aa_major {
                -1
            } else if u < p_aa_major + p_het {
                0
            } else {
                1
            };
        }
    }

    // Weather: AR(1) per (location, variable) around a variable+location mean.
    let mut rng_weather = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "weather"));
    let phi = config.weather_persistence;
    let innovation = Normal::new(0.0, 1.0).expect("valid normal");
    let var_means: Vec<f64> = (0..WEATHER_VARS)
        .map(|_| rng_weather.random_range(-2.0..2.0))
        .collect();
    let mut weather = Array3::<f64>::zeros((n_l, n_y, WEATHER_VARS));
    for l in 0..n_l {
        for w in 0..WEATHER_VARS {
            let loc_mean = var_means[w] + 1.5 * innovation.sample(&mut rng_weather);
            let stationary_sd = 1.0 / (1.0 - phi * phi).sqrt();
            let mut x = loc_mean + stationary_sd * innovation.sample(&mut rng_weather);
            weather[[l, 0, w]] = x;
            for y in 1..n_y {
                x = loc_mean + phi * (x - loc_mean) + innovation.sample(&mut rng_weather);
                weather[[l, y, w]] = x;
            }
        }
    }

    // Static soil per location.
    let mut rng_soil = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "soil"));
    let mut soil = Array2::<f64>::zeros((n_l, SOIL_VARS));
    for l in 0..n_l {
        for k in 0..SOIL_VARS {
            soil[[l, k]] = innovation.sample(&mut rng_soil);
        }
    }

    // Planted effects.
    let mut rng_fx = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "effects"));
    let mut causal_idx: Vec<usize> = (0..p).collect();
    for i in 0..config.n_causal_markers {
        let j = rng_fx.random_range(i..p);
        causal_idx.swap(i, j);
    }
    let mut causal_markers: Vec<(usize, f64)> = causal_idx[..config.n_causal_markers]
        .iter()
        .map(|&idx| {
            let magnitude = config.marker_effect_sd * rng_fx.random_range(0.5..1.5);
            let sign = if rng_fx.random::<bool>() { 1.0 } else { -1.0 };
            (idx, sign * magnitude)
        })
        .collect();
    causal_markers.sort_unstable_by_key(|(idx, _)| *idx);

    // Weather responses saturate around the variable's own level; the AR
    // process has unit-scale innovations, so scale ~ stationary sd.
    let w_sd = 1.0 / (1.0 - phi * phi).sqrt();
    let mut picked = Vec::new();
    while picked.len() < 2 {
        let v = rng_fx.random_range(0..WEATHER_VARS);
        if !picked.contains(&v) {
            picked.push(v);
        }
    }
    let mut env_terms = vec![
        SaturatingTerm {
            group: FeatureGroup::Weather,
            var_idx: picked[0],
            amplitude: config.weather_effect,
            center: var_means[picked[0]],
            scale: w_sd,
        },
        SaturatingTerm {
            group: FeatureGroup::Weather,
            var_idx: picked[1],
            amplitude: 0.6 * config.weather_effect,
            center: var_means[picked[1]],
            scale: 1.5 * w_sd,
        },
    ];
    env_terms.push(SaturatingTerm {
        group: FeatureGroup::Soil,
        var_idx: 0,
        amplitude: config.soil_effect,
        center: 0.0,
        scale: 1.0,
    });
    env_terms.push(SaturatingTerm {
        group: FeatureGroup::Soil,
        var_idx: 1,
        amplitude: 0.6 * config.soil_effect,
        center: 0.0,
        scale: 1.5,
    });

    let gxe_terms: Vec<GxeTerm> = if config.gxe_strength > 0.0 {
        causal_markers
            .iter()
            .take(3)
            .map(|&(marker_idx, _)| GxeTerm {
                marker_idx,
                weather_idx: picked[0],
                coeff: config.gxe_strength,
                weather_center: var_means[picked[0]],
                weather_scale: w_sd,
            })
            .collect()
    } else {
        Vec::new()
    };

    let causal_true_codes = {
        let mut m = Array2::<i8>::zeros((n_h, causal_markers.len()));
        for (c, &(idx, _)) in causal_markers.iter().enumerate() {
            for i in 0..n_h {
                m[[i, c]] = true_codes[[i, idx]];
            }
        }
        m
    };
    let ground_truth = GroundTruth {
        base_yield: config.base_yield,
        causal_markers,
        env_terms,
        gxe_terms,
        causal_true_codes,
    };

    // Yields over the full hybrid x location x year product.
    let mut rng_noise = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "noise"));
    let noise = Normal::new(0.0, config.noise_sd.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut yields = Array3::<f64>::zeros((n_h, n_l, n_y));
    for h in 0..n_h {
        for l in 0..n_l {
            for y in 0..n_y {
                let mut v = ground_truth.noiseless_yield(
                    h,
                    weather.index_axis(ndarray::Axis(0), l).row(y),
                    soil.row(l),
                );
                if config.noise_sd > 0.0 {
                    v += noise.sample(&mut rng_noise);
                }
                yields[[h, l, y]] = v;
            }
        }
    }

    // Check yield: exact mean across hybrids at each (location, year).
    let mut check = Array2::<f64>::zeros((n_l, n_y));
    for l in 0..n_l {
        for y in 0..n_y {
            let sum: f64 = (0..n_h).map(|h| yields[[h, l, y]]).sum();
            check[[l, y]] = sum / n_h as f64;
        }
    }

    // Mask missing genotype calls on the emitted matrix only.
    let mut rng_missing = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "missing"));
    let mut emitted = true_codes;
    if config.missing_rate > 0.0 {
        for v in emitted.iter_mut() {
            if rng_missing.random::<f64>() < config.missing_rate {
                *v = MISSING_CODE;
            }
        }
    }

    let id_width = |n: usize| (n.max(1) as f64).log10().floor() as usize + 1;
    let hw = id_width(n_h);
    let lw = id_width(n_l);
    let pw = id_width(p);
    let hybrid_ids: Vec<String> = (0..n_h).map(|i| format!("H{:0hw$}", i + 1)).collect();
    let location_ids: Vec<String> = (0..n_l).map(|i| format!("L{:0lw$}", i + 1)).collect();
    let marker_names: Vec<String> = (0..p).map(|j| format!("m_{:0pw$}", j + 1)).collect();

    let markers = MarkerMatrix::new(hybrid_ids.clone(), marker_names, emitted)?;

    let mut weather_rows = Vec::with_capacity(n_l * n_y);
    for l in 0..n_l {
        for y in 0..n_y {
            weather_rows.push((
                location_ids[l].clone(),
                config.year_start + y as i32,
                weather
                    .index_axis(ndarray::Axis(0), l)
                    .row(y)
                    .iter()
                    .copied()
                    .collect(),
            ));
        }
    }
    let soil_rows: Vec<(String, Vec<f64>)> = (0..n_l)
        .map(|l| (location_ids[l].clone(), soil.row(l).iter().copied().collect()))
        .collect();
    let env = EnvironmentTable::new(weather_rows, soil_rows)?;

    let mut records = Vec::with_capacity(n_h * n_l * n_y);
    for h in 0..n_h {
        for l in 0..n_l {
            for y in 0..n_y {
                records.push(PerfRecord {
                    hybrid_id: hybrid_ids[h].clone(),
                    location_id: location_ids[l].clone(),
                    year: config.year_start + y as i32,
                    yield_bu: yields[[h, l, y]],
                    check_yield: check[[l, y]],
                });
            }
        }
    }
    let performance = PerformanceTable::new(records)?;

    Ok(SynthOutput {
        markers,
        env,
        performance,
        ground_truth,
    })
}

/// Write the four ingestion CSVs plus ground_truth.csv into a directory.
pub fn write_synthetic(output: &SynthOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(&dir.display().to_string(), e))?;
    write_genotype_csv(&output.markers, &dir.join("genotype.csv"))?;

    let mut weather_rows = Vec::new();
    for &(loc_idx, year) in output.env.weather_keys() {
        weather_rows.push((
            output.env.location_id(loc_idx).to_string(),
            year,
            output
                .env
                .weather_at(loc_idx, year)
                .expect("key enumerated from table")
                .iter()
                .copied()
                .collect(),
        ));
    }
    write_weather_csv(&weather_rows, &dir.join("weather.csv"), false)?;

    let soil_rows: Vec<(String, Vec<f64>)> = output
        .env
        .location_ids()
        .iter()
        .enumerate()
        .filter_map(|(l, id)| {
            output
                .env
                .soil_at(l)
                .map(|s| (id.clone(), s.iter().copied().collect()))
        })
        .collect();
    write_soil_csv(&soil_rows, &dir.join("soil.csv"))?;
    write_performance_csv(&output.performance, &dir.join("performance.csv"))?;

    let gt_path = dir.join("ground_truth.csv");
    let mut w = csv::Writer::from_path(&gt_path)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    w.write_record(["feature", "group", "coefficient"])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    let gt = &output.ground_truth;
    for &(idx, coeff) in &gt.causal_markers {
        w.write_record([
            output.markers.marker_names()[idx].as_str(),
            "marker",
            &coeff.to_string(),
        ])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    for term in &gt.env_terms {
        let name = match term.group {
            FeatureGroup::Weather => format!("w_{:02}", term.var_idx + 1),
            FeatureGroup::Soil => format!("s_{}", term.var_idx + 1),
            FeatureGroup::Marker => unreachable!(),
        };
        w.write_record([
            name.as_str(),
            &term.group.to_string(),
            &term.amplitude.to_string(),
        ])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    for term in &gt.gxe_terms {
        let name = format!(
            "{}*w_{:02}",
            output.markers.marker_names()[term.marker_idx],
            term.weather_idx + 1
        );
        w.write_record([name.as_str(), "gxe", &term.coeff.to_string()])
            .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    w.flush()
        .map_err(|e| Error::io(&gt_path.display().to_string(), e))?;
    Ok(())
}
