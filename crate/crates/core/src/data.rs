//! Domain types for trials, genotype, environment, and performance data,
//! CSV ingestion, and train/validation splitting by year.
//!
//! All tables are immutable once built and safe to share across threads;
//! datasets reference the genotype and environment tables through `Arc`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of weather variables per (location, year): 6 variables over 12 months.
pub const WEATHER_VARS: usize = 72;
/// Number of static soil variables per location.
pub const SOIL_VARS: usize = 8;

/// Sentinel for a missing genotype call. Non-missing codes are -1 (aa), 0 (aA), +1 (AA).
pub const MISSING_CODE: i8 = i8::MIN;

/// Genotype marker matrix: one row per hybrid, one column per marker.
#[derive(Debug, Clone)]
pub struct MarkerMatrix {
    hybrid_ids: Vec<String>,
    marker_names: Vec<String>,
    values: Array2<i8>,
    index: HashMap<String, usize>,
}

impl MarkerMatrix {
    /// Build a matrix, validating codes and id uniqueness.
    pub fn new(
        hybrid_ids: Vec<String>,
        marker_names: Vec<String>,
        values: Array2<i8>,
    ) -> Result<Self> {
        if values.nrows() != hybrid_ids.len() {
            return Err(Error::InvalidData(format!(
                "genotype row count {} != hybrid id count {}",
                values.nrows(),
                hybrid_ids.len()
            )));
        }
        if values.ncols() != marker_names.len() {
            return Err(Error::InvalidData(format!(
                "genotype column count {} != marker name count {}",
                values.ncols(),
                marker_names.len()
            )));
        }
        for &v in values.iter() {
            if v != MISSING_CODE && !(-1..=1).contains(&v) {
                return Err(Error::InvalidData(format!("genotype code {v} outside {{-1,0,1}}")));
            }
        }
        let mut index = HashMap::with_capacity(hybrid_ids.len());
        for (i, id) in hybrid_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateKey {
                    path: "genotype".into(),
                    key: id.clone(),
                });
            }
        }
        Ok(Self {
            hybrid_ids,
            marker_names,
            values,
            index,
        })
    }

    pub fn n_hybrids(&self) -> usize {
        self.hybrid_ids.len()
    }

    pub fn n_markers(&self) -> usize {
        self.marker_names.len()
    }

    pub fn hybrid_ids(&self) -> &[String] {
        &self.hybrid_ids
    }

    pub fn marker_names(&self) -> &[String] {
        &self.marker_names
    }

    pub fn values(&self) -> &Array2<i8> {
        &self.values
    }

    pub fn hybrid_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, hybrid_idx: usize) -> ArrayView1<'_, i8> {
        self.values.row(hybrid_idx)
    }

    /// Count of missing calls over the whole matrix.
    pub fn n_missing(&self) -> usize {
        self.values.iter().filter(|&&v| v == MISSING_CODE).count()
    }

    /// New matrix keeping only the given marker columns (order preserved).
    pub fn select_markers(&self, kept: &[usize]) -> Result<Self> {
        for &j in kept {
            if j >= self.n_markers() {
                return Err(Error::InvalidData(format!("marker index {j} out of range")));
            }
        }
        let names = kept.iter().map(|&j| self.marker_names[j].clone()).collect();
        let mut values = Array2::zeros((self.n_hybrids(), kept.len()));
        for (out_j, &j) in kept.iter().enumerate() {
            values.column_mut(out_j).assign(&self.values.column(j));
        }
        MarkerMatrix::new(self.hybrid_ids.clone(), names, values)
    }
}

/// Weather (per location-year) and soil (per location) observations.
#[derive(Debug, Clone)]
pub struct EnvironmentTable {
    location_ids: Vec<String>,
    loc_index: HashMap<String, usize>,
    /// (location index, year) keys aligned with `weather` rows.
    weather_keys: Vec<(usize, i32)>,
    weather: Array2<f64>,
    weather_index: HashMap<(usize, i32), usize>,
    /// Soil row per location index; locations missing soil map to None.
    soil_rows: Vec<Option<usize>>,
    soil: Array2<f64>,
}

impl EnvironmentTable {
    /// Build from raw parts: weather rows keyed by (location id, year) and soil rows by location id.
    pub fn new(
        weather_rows: Vec<(String, i32, Vec<f64>)>,
        soil_table: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let mut location_ids = Vec::new();
        let mut loc_index: HashMap<String, usize> = HashMap::new();
        let mut intern = |id: &str, location_ids: &mut Vec<String>| -> usize {
            if let Some(&i) = loc_index.get(id) {
                i
            } else {
                let i = location_ids.len();
                location_ids.push(id.to_string());
                loc_index.insert(id.to_string(), i);
                i
            }
        };

        let mut weather_keys = Vec::with_capacity(weather_rows.len());
        let mut weather = Array2::zeros((weather_rows.len(), WEATHER_VARS));
        let mut weather_index = HashMap::with_capacity(weather_rows.len());
        for (r, (loc, year, vals)) in weather_rows.into_iter().enumerate() {
            if vals.len() != WEATHER_VARS {
                return Err(Error::InvalidData(format!(
                    "weather vector for ({loc}, {year}) has length {}, expected {WEATHER_VARS}",
                    vals.len()
                )));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "non-finite weather value for ({loc}, {year})"
                )));
            }
            let li = intern(&loc, &mut location_ids);
            if weather_index.insert((li, year), r).is_some() {
                return Err(Error::DuplicateKey {
                    path: "weather".into(),
                    key: format!("({loc}, {year})"),
                });
            }
            weather_keys.push((li, year));
            for (c, v) in vals.into_iter().enumerate() {
                weather[[r, c]] = v;
            }
        }

        let mut soil = Array2::zeros((soil_table.len(), SOIL_VARS));
        let mut soil_by_loc: HashMap<usize, usize> = HashMap::new();
        for (r, (loc, vals)) in soil_table.into_iter().enumerate() {
            if vals.len() != SOIL_VARS {
                return Err(Error::InvalidData(format!(
                    "soil vector for {loc} has length {}, expected {SOIL_VARS}",
                    vals.len()
                )));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("non-finite soil value for {loc}")));
            }
            let li = intern(&loc, &mut location_ids);
            if soil_by_loc.insert(li, r).is_some() {
                return Err(Error::DuplicateKey {
                    path: "soil".into(),
                    key: loc,
                });
            }
            for (c, v) in vals.into_iter().enumerate() {
                soil[[r, c]] = v;
            }
        }
        let soil_rows = (0..location_ids.len())
            .map(|li| soil_by_loc.get(&li).copied())
            .collect();

        Ok(Self {
            location_ids,
            loc_index,
            weather_keys,
            weather,
            weather_index,
            soil_rows,
            soil,
        })
    }

    pub fn location_ids(&self) -> &[String] {
        &self.location_ids
    }

    pub fn n_locations(&self) -> usize {
        self.location_ids.len()
    }

    pub fn location_index(&self, id: &str) -> Option<usize> {
        self.loc_index.get(id).copied()
    }

    pub fn location_id(&self, idx: usize) -> &str {
        &self.location_ids[idx]
    }

    /// All (location index, year) weather keys in table order.
    pub fn weather_keys(&self) -> &[(usize, i32)] {
        &self.weather_keys
    }

    pub fn weather_row_index(&self, loc_idx: usize, year: i32) -> Option<usize> {
        self.weather_index.get(&(loc_idx, year)).copied()
    }

    pub fn weather_row(&self, row: usize) -> ArrayView1<'_, f64> {
        self.weather.row(row)
    }

    pub fn weather_at(&self, loc_idx: usize, year: i32) -> Option<ArrayView1<'_, f64>> {
        self.weather_row_index(loc_idx, year).map(|r| self.weather.row(r))
    }

    pub fn soil_at(&self, loc_idx: usize) -> Option<ArrayView1<'_, f64>> {
        self.soil_rows
            .get(loc_idx)
            .copied()
            .flatten()
            .map(|r| self.soil.row(r))
    }

    /// Sorted distinct years with weather at a location.
    pub fn years_at(&self, loc_idx: usize) -> Vec<i32> {
        let mut years: Vec<i32> = self
            .weather_keys
            .iter()
            .filter(|(l, _)| *l == loc_idx)
            .map(|(_, y)| *y)
            .collect();
        years.sort_unstable();
        years
    }

    /// New table keeping only weather rows with `year <= last`. Soil and the
    /// location list are unchanged. Used to fence forecaster training off
    /// from later years.
    pub fn with_years_until(&self, last: i32) -> Result<EnvironmentTable> {
        let weather_rows: Vec<(String, i32, Vec<f64>)> = self
            .weather_keys
            .iter()
            .enumerate()
            .filter(|(_, (_, year))| *year <= last)
            .map(|(row, &(loc, year))| {
                (
                    self.location_ids[loc].clone(),
                    year,
                    self.weather.row(row).iter().copied().collect(),
                )
            })
            .collect();
        let soil_rows: Vec<(String, Vec<f64>)> = self
            .location_ids
            .iter()
            .enumerate()
            .filter_map(|(l, id)| {
                self.soil_at(l)
                    .map(|s| (id.clone(), s.iter().copied().collect()))
            })
            .collect();
        EnvironmentTable::new(weather_rows, soil_rows)
    }

    /// New table with the weather vectors of the given (location id, year)
    /// keys replaced (e.g. by forecasts). Keys, ordering, and soil are
    /// unchanged, so datasets referencing this table by row index stay valid.
    pub fn with_weather_replaced(
        &self,
        replacements: &[(String, i32, Vec<f64>)],
    ) -> Result<EnvironmentTable> {
        let mut out = self.clone();
        for (loc, year, vals) in replacements {
            let Some(li) = self.location_index(loc) else {
                return Err(Error::InvalidData(format!("unknown location {loc}")));
            };
            let Some(row) = self.weather_row_index(li, *year) else {
                return Err(Error::InvalidData(format!(
                    "no weather row for ({loc}, {year}) to replace"
                )));
            };
            if vals.len() != WEATHER_VARS {
                return Err(Error::InvalidData(format!(
                    "replacement vector for ({loc}, {year}) has length {}",
                    vals.len()
                )));
            }
            for (c, v) in vals.iter().enumerate() {
                out.weather[[row, c]] = *v;
            }
        }
        Ok(out)
    }
}

/// One observed trial outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfRecord {
    pub hybrid_id: String,
    pub location_id: String,
    pub year: i32,
    pub yield_bu: f64,
    pub check_yield: f64,
}

impl PerfRecord {
    /// Relative performance of the hybrid at its location.
    pub fn yield_difference(&self) -> f64 {
        self.yield_bu - self.check_yield
    }
}

/// All performance records, with (hybrid, location, year) keys unique.
#[derive(Debug, Clone)]
pub struct PerformanceTable {
    records: Vec<PerfRecord>,
}

impl PerformanceTable {
    pub fn new(records: Vec<PerfRecord>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(records.len());
        for rec in &records {
            let key = (rec.hybrid_id.clone(), rec.location_id.clone(), rec.year);
            if seen.insert(key, ()).is_some() {
                return Err(Error::DuplicateKey {
                    path: "performance".into(),
                    key: format!("({}, {}, {})", rec.hybrid_id, rec.location_id, rec.year),
                });
            }
            if !rec.yield_bu.is_finite() || !rec.check_yield.is_finite() {
                return Err(Error::InvalidData(format!(
                    "non-finite yield for ({}, {}, {})",
                    rec.hybrid_id, rec.location_id, rec.year
                )));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PerfRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// One joined trial row; marker/weather/soil vectors are resolved by index
/// into the shared tables rather than copied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRow {
    pub hybrid_idx: usize,
    pub loc_idx: usize,
    pub weather_row: usize,
    pub year: i32,
    pub yield_bu: f64,
    pub check_yield: f64,
}

impl TrialRow {
    pub fn yield_difference(&self) -> f64 {
        self.yield_bu - self.check_yield
    }
}

/// A performance record that could not be joined, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub record_index: usize,
    pub key: String,
    pub reason: String,
}

/// Joined view over genotype, environment, and performance tables.
#[derive(Debug, Clone)]
pub struct FieldTrialDataset {
    markers: Arc<MarkerMatrix>,
    env: Arc<EnvironmentTable>,
    rows: Vec<TrialRow>,
}

impl FieldTrialDataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[TrialRow] {
        &self.rows
    }

    pub fn markers(&self) -> &Arc<MarkerMatrix> {
        &self.markers
    }

    pub fn env(&self) -> &Arc<EnvironmentTable> {
        &self.env
    }

    pub fn marker_row(&self, row: usize) -> ArrayView1<'_, i8> {
        self.markers.row(self.rows[row].hybrid_idx)
    }

    pub fn weather(&self, row: usize) -> ArrayView1<'_, f64> {
        self.env.weather_row(self.rows[row].weather_row)
    }

    pub fn soil(&self, row: usize) -> ArrayView1<'_, f64> {
        self.env
            .soil_at(self.rows[row].loc_idx)
            .expect("joined rows always resolve soil")
    }

    pub fn location_id(&self, row: usize) -> &str {
        self.env.location_id(self.rows[row].loc_idx)
    }

    pub fn yields(&self) -> Array1<f64> {
        self.rows.iter().map(|r| r.yield_bu).collect()
    }

    pub fn check_yields(&self) -> Array1<f64> {
        self.rows.iter().map(|r| r.check_yield).collect()
    }

    pub fn yield_differences(&self) -> Array1<f64> {
        self.rows.iter().map(|r| r.yield_difference()).collect()
    }

    /// New dataset over the same tables restricted to the given row indices.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            markers: Arc::clone(&self.markers),
            env: Arc::clone(&self.env),
            rows: indices.iter().map(|&i| self.rows[i]).collect(),
        }
    }

    /// Replace the marker table (e.g. after filtering columns). The new table
    /// must cover every hybrid referenced by the rows.
    pub fn with_markers(&self, markers: Arc<MarkerMatrix>) -> Result<Self> {
        for row in &self.rows {
            if row.hybrid_idx >= markers.n_hybrids() {
                return Err(Error::InvalidData(
                    "replacement marker table does not cover all hybrids".into(),
                ));
            }
        }
        Ok(Self {
            markers,
            env: Arc::clone(&self.env),
            rows: self.rows.clone(),
        })
    }

    /// Replace the environment table. Row indices must stay valid, so the
    /// replacement needs the same weather-row layout (see
    /// `EnvironmentTable::with_weather_replaced`).
    pub fn with_env(&self, env: Arc<EnvironmentTable>) -> Result<Self> {
        for row in &self.rows {
            if row.weather_row >= env.weather_keys().len() || env.soil_at(row.loc_idx).is_none() {
                return Err(Error::InvalidData(
                    "replacement environment table does not cover all rows".into(),
                ));
            }
        }
        Ok(Self {
            markers: Arc::clone(&self.markers),
            env,
            rows: self.rows.clone(),
        })
    }
}

/// Result of joining: the dataset plus any unresolvable records.
#[derive(Debug)]
pub struct JoinOutcome {
    pub dataset: FieldTrialDataset,
    pub rejections: Vec<Rejection>,
}

/// Join performance records against genotype and environment tables.
///
/// Unresolvable records are reported in the rejection list, never silently
/// dropped.
pub fn join_trials(
    markers: MarkerMatrix,
    env: EnvironmentTable,
    performance: PerformanceTable,
) -> JoinOutcome {
    let markers = Arc::new(markers);
    let env = Arc::new(env);
    let mut rows = Vec::with_capacity(performance.len());
    let mut rejections = Vec::new();

    for (i, rec) in performance.records().iter().enumerate() {
        let key = format!("({}, {}, {})", rec.hybrid_id, rec.location_id, rec.year);
        let Some(hybrid_idx) = markers.hybrid_index(&rec.hybrid_id) else {
            rejections.push(Rejection {
                record_index: i,
                key,
                reason: format!("unknown hybrid {}", rec.hybrid_id),
            });
            continue;
        };
        let Some(loc_idx) = env.location_index(&rec.location_id) else {
            rejections.push(Rejection {
                record_index: i,
                key,
                reason: format!("unknown location {}", rec.location_id),
            });
            continue;
        };
        let Some(weather_row) = env.weather_row_index(loc_idx, rec.year) else {
            rejections.push(Rejection {
                record_index: i,
                key,
                reason: format!("no weather for ({}, {})", rec.location_id, rec.year),
            });
            continue;
        };
        if env.soil_at(loc_idx).is_none() {
            rejections.push(Rejection {
                record_index: i,
                key,
                reason: format!("no soil for {}", rec.location_id),
            });
            continue;
        }
        rows.push(TrialRow {
            hybrid_idx,
            loc_idx,
            weather_row,
            year: rec.year,
            yield_bu: rec.yield_bu,
            check_yield: rec.check_yield,
        });
    }

    JoinOutcome {
        dataset: FieldTrialDataset { markers, env, rows },
        rejections,
    }
}

/// Year-boundary split rule: rows before the cutoff year train; rows in the
/// cutoff year are split by a seeded fraction into validation vs training.
#[derive(Debug, Clone, Copy)]
pub struct SplitRule {
    pub cutoff_year: i32,
    pub validation_fraction: f64,
    pub seed: u64,
}

/// Disjoint train/validation datasets plus a description of the rule applied.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: FieldTrialDataset,
    pub validation: FieldTrialDataset,
    pub rule: String,
}

/// Split a dataset by year. Deterministic under the rule's seed.
pub fn split_by_year(dataset: &FieldTrialDataset, rule: SplitRule) -> Result<Split> {
    if dataset.is_empty() {
        return Err(Error::InvalidData("cannot split an empty dataset".into()));
    }
    if !(0.0..=1.0).contains(&rule.validation_fraction) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction {} outside [0, 1]",
            rule.validation_fraction
        )));
    }

    let mut cutoff_rows: Vec<usize> = Vec::new();
    let mut train_rows: Vec<usize> = Vec::new();
    for (i, row) in dataset.rows().iter().enumerate() {
        if row.year == rule.cutoff_year {
            cutoff_rows.push(i);
        } else {
            train_rows.push(i);
        }
    }

    let n_val = ((cutoff_rows.len() as f64) * rule.validation_fraction).round() as usize;
    if n_val == 0 {
        return Err(Error::InvalidData(format!(
            "validation set empty under rule (cutoff {}, fraction {})",
            rule.cutoff_year, rule.validation_fraction
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rule.seed);
    let mut shuffled = cutoff_rows;
    shuffled.shuffle(&mut rng);
    let (val_rows, extra_train) = shuffled.split_at(n_val);
    train_rows.extend_from_slice(extra_train);
    train_rows.sort_unstable();
    let mut val_rows = val_rows.to_vec();
    val_rows.sort_unstable();

    Ok(Split {
        train: dataset.subset(&train_rows),
        validation: dataset.subset(&val_rows),
        rule: format!(
            "hold out {:.4} of year {} (seed {})",
            rule.validation_fraction, rule.cutoff_year, rule.seed
        ),
    })
}

// ---------------------------------------------------------------------------
// CSV ingestion and serialization
// ---------------------------------------------------------------------------

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::BadHeader {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_f64(path: &str, record: &csv::StringRecord, field: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>().map_err(|_| Error::MalformedRow {
        path: path.to_string(),
        line: record_line(record),
        message: format!("field {field}: cannot parse {raw:?} as a number"),
    })
}

fn parse_year(path: &str, record: &csv::StringRecord, raw: &str) -> Result<i32> {
    raw.parse::<i32>().map_err(|_| Error::MalformedRow {
        path: path.to_string(),
        line: record_line(record),
        message: format!("field year: cannot parse {raw:?} as an integer"),
    })
}

/// Read genotype.csv: `hybrid_id, <marker columns...>` with values in {-1, 0, 1, NA}.
/// An empty cell also counts as missing.
pub fn read_genotype_csv(path: &Path) -> Result<MarkerMatrix> {
    let path_str = path.display().to_string();
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::BadHeader {
            path: path_str.clone(),
            message: e.to_string(),
        })?
        .clone();
    if headers.len() < 2 || &headers[0] != "hybrid_id" {
        return Err(Error::BadHeader {
            path: path_str,
            message: "expected header: hybrid_id, <marker columns...>".into(),
        });
    }
    let marker_names: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    {
        let mut seen = std::collections::HashSet::new();
        for name in &marker_names {
            if !seen.insert(name) {
                return Err(Error::BadHeader {
                    path: path_str,
                    message: format!("duplicate marker column {name}"),
                });
            }
        }
    }

    let mut hybrid_ids = Vec::new();
    let mut flat: Vec<i8> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            path: path_str.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::MalformedRow {
                path: path_str.clone(),
                line: record_line(&record),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        hybrid_ids.push(record[0].to_string());
        for raw in record.iter().skip(1) {
            let code = match raw {
                "" | "NA" => MISSING_CODE,
                "-1" => -1,
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::MalformedRow {
                        path: path_str.clone(),
                        line: record_line(&record),
                        message: format!("genotype value {other:?} not in {{-1,0,1,NA}}"),
                    })
                }
            };
            flat.push(code);
        }
    }

    let n = hybrid_ids.len();
    let p = marker_names.len();
    let values = Array2::from_shape_vec((n, p), flat)
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    MarkerMatrix::new(hybrid_ids, marker_names, values).map_err(|e| match e {
        Error::DuplicateKey { key, .. } => Error::DuplicateKey {
            path: path_str,
            key,
        },
        other => other,
    })
}

/// Expected weather header: `location_id, year, w_01..w_72`, optionally
/// followed by a `forecast` column (emitted by the weather forecaster).
fn check_weather_header(path: &str, headers: &csv::StringRecord) -> Result<bool> {
    let expected_len = 2 + WEATHER_VARS;
    let has_forecast_col = headers.len() == expected_len + 1 && &headers[expected_len] == "forecast";
    if !(headers.len() == expected_len || has_forecast_col) {
        return Err(Error::BadHeader {
            path: path.to_string(),
            message: format!(
                "expected {} columns (location_id, year, w_01..w_{WEATHER_VARS}), found {}",
                expected_len,
                headers.len()
            ),
        });
    }
    if &headers[0] != "location_id" || &headers[1] != "year" {
        return Err(Error::BadHeader {
            path: path.to_string(),
            message: "expected header starting location_id, year".into(),
        });
    }
    for i in 0..WEATHER_VARS {
        let expected = format!("w_{:02}", i + 1);
        if &headers[2 + i] != expected.as_str() {
            return Err(Error::BadHeader {
                path: path.to_string(),
                message: format!("expected column {expected}, found {}", &headers[2 + i]),
            });
        }
    }
    Ok(has_forecast_col)
}

/// Read weather.csv rows as (location_id, year, 72 values).
pub fn read_weather_csv(path: &Path) -> Result<Vec<(String, i32, Vec<f64>)>> {
    let path_str = path.display().to_string();
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::BadHeader {
            path: path_str.clone(),
            message: e.to_string(),
        })?
        .clone();
    check_weather_header(&path_str, &headers)?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            path: path_str.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::MalformedRow {
                path: path_str.clone(),
                line: record_line(&record),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let year = parse_year(&path_str, &record, &record[1])?;
        let mut vals = Vec::with_capacity(WEATHER_VARS);
        for i in 0..WEATHER_VARS {
            vals.push(parse_f64(
                &path_str,
                &record,
                &format!("w_{:02}", i + 1),
                &record[2 + i],
            )?);
        }
        rows.push((record[0].to_string(), year, vals));
    }
    Ok(rows)
}

/// Read soil.csv rows as (location_id, 8 values).
pub fn read_soil_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let path_str = path.display().to_string();
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::BadHeader {
            path: path_str.clone(),
            message: e.to_string(),
        })?
        .clone();
    if headers.len() != 1 + SOIL_VARS || &headers[0] != "location_id" {
        return Err(Error::BadHeader {
            path: path_str,
            message: format!("expected header: location_id, s_1..s_{SOIL_VARS}"),
        });
    }
    for i in 0..SOIL_VARS {
        let expected = format!("s_{}", i + 1);
        if &headers[1 + i] != expected.as_str() {
            return Err(Error::BadHeader {
                path: path_str,
                message: format!("expected column {expected}, found {}", &headers[1 + i]),
            });
        }
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            path: path_str.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::MalformedRow {
                path: path_str.clone(),
                line: record_line(&record),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut vals = Vec::with_capacity(SOIL_VARS);
        for i in 0..SOIL_VARS {
            vals.push(parse_f64(
                &path_str,
                &record,
                &format!("s_{}", i + 1),
                &record[1 + i],
            )?);
        }
        rows.push((record[0].to_string(), vals));
    }
    Ok(rows)
}

/// Read performance.csv: `hybrid_id, location_id, year, yield, check_yield`.
pub fn read_performance_csv(path: &Path) -> Result<PerformanceTable> {
    let path_str = path.display().to_string();
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::BadHeader {
            path: path_str.clone(),
            message: e.to_string(),
        })?
        .clone();
    let expected = ["hybrid_id", "location_id", "year", "yield", "check_yield"];
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::BadHeader {
            path: path_str,
            message: format!("expected header: {}", expected.join(", ")),
        });
    }

    let mut records = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            path: path_str.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        if record.len() != expected.len() {
            return Err(Error::MalformedRow {
                path: path_str.clone(),
                line: record_line(&record),
                message: format!("expected {} fields, found {}", expected.len(), record.len()),
            });
        }
        records.push(PerfRecord {
            hybrid_id: record[0].to_string(),
            location_id: record[1].to_string(),
            year: parse_year(&path_str, &record, &record[2])?,
            yield_bu: parse_f64(&path_str, &record, "yield", &record[3])?,
            check_yield: parse_f64(&path_str, &record, "check_yield", &record[4])?,
        });
    }
    PerformanceTable::new(records).map_err(|e| match e {
        Error::DuplicateKey { key, .. } => Error::DuplicateKey {
            path: path_str,
            key,
        },
        other => other,
    })
}

/// Ingest the four input files into typed, validated tables.
pub fn ingest_tables(
    genotype_path: &Path,
    weather_path: &Path,
    soil_path: &Path,
    performance_path: &Path,
) -> Result<(MarkerMatrix, EnvironmentTable, PerformanceTable)> {
    let markers = read_genotype_csv(genotype_path)?;
    let weather = read_weather_csv(weather_path)?;
    let soil = read_soil_csv(soil_path)?;
    let env = EnvironmentTable::new(weather, soil)?;
    let performance = read_performance_csv(performance_path)?;
    Ok((markers, env, performance))
}

fn create_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(&path.display().to_string(), io),
        other => Error::Serialization(format!("{other:?}")),
    })
}

fn finish_writer(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(&path.display().to_string(), e))
}

/// Write genotype.csv. Missing calls are written as `NA`.
pub fn write_genotype_csv(markers: &MarkerMatrix, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut header = vec!["hybrid_id".to_string()];
    header.extend(markers.marker_names().iter().cloned());
    w.write_record(&header)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    for (i, id) in markers.hybrid_ids().iter().enumerate() {
        let mut rec = Vec::with_capacity(1 + markers.n_markers());
        rec.push(id.clone());
        for &v in markers.row(i) {
            rec.push(if v == MISSING_CODE {
                "NA".to_string()
            } else {
                v.to_string()
            });
        }
        w.write_record(&rec)
            .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    finish_writer(path, w)
}

/// Write weather.csv from explicit rows (used by both the generator and the
/// forecaster; the forecaster sets `forecast` to true).
pub fn write_weather_csv(
    rows: &[(String, i32, Vec<f64>)],
    path: &Path,
    forecast: bool,
) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut header = vec!["location_id".to_string(), "year".to_string()];
    for i in 0..WEATHER_VARS {
        header.push(format!("w_{:02}", i + 1));
    }
    if forecast {
        header.push("forecast".to_string());
    }
    w.write_record(&header)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    for (loc, year, vals) in rows {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(loc.clone());
        rec.push(year.to_string());
        for v in vals {
            rec.push(v.to_string());
        }
        if forecast {
            rec.push("true".to_string());
        }
        w.write_record(&rec)
            .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    finish_writer(path, w)
}

/// Write soil.csv.
pub fn write_soil_csv(rows: &[(String, Vec<f64>)], path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut header = vec!["location_id".to_string()];
    for i in 0..SOIL_VARS {
        header.push(format!("s_{}", i + 1));
    }
    w.write_record(&header)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    for (loc, vals) in rows {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(loc.clone());
        for v in vals {
            rec.push(v.to_string());
        }
        w.write_record(&rec)
            .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    finish_writer(path, w)
}

/// Write performance.csv.
pub fn write_performance_csv(table: &PerformanceTable, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(["hybrid_id", "location_id", "year", "yield", "check_yield"])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    for rec in table.records() {
        w.write_record([
            rec.hybrid_id.as_str(),
            rec.location_id.as_str(),
            &rec.year.to_string(),
            &rec.yield_bu.to_string(),
            &rec.check_yield.to_string(),
        ])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    finish_writer(path, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_markers() -> MarkerMatrix {
        MarkerMatrix::new(
            vec!["h1".into(), "h2".into()],
            vec!["m_1".into(), "m_2".into()],
            array![[1, -1], [0, 1]],
        )
        .unwrap()
    }

    fn small_env(years: &[i32]) -> EnvironmentTable {
        let mut weather = Vec::new();
        for loc in ["l1", "l2"] {
            for &y in years {
                weather.push((loc.to_string(), y, vec![0.5; WEATHER_VARS]));
            }
        }
        let soil = vec![
            ("l1".to_string(), vec![0.1; SOIL_VARS]),
            ("l2".to_string(), vec![0.2; SOIL_VARS]),
        ];
        EnvironmentTable::new(weather, soil).unwrap()
    }

    fn product_performance(years: &[i32]) -> PerformanceTable {
        let mut records = Vec::new();
        for h in ["h1", "h2"] {
            for l in ["l1", "l2"] {
                for &y in years {
                    records.push(PerfRecord {
                        hybrid_id: h.into(),
                        location_id: l.into(),
                        year: y,
                        yield_bu: 100.0,
                        check_yield: 110.0,
                    });
                }
            }
        }
        PerformanceTable::new(records).unwrap()
    }

    #[test]
    fn genotype_csv_parses_na_as_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("genotype.csv");
        std::fs::write(&path, "hybrid_id,m_1,m_2\nh1,1,NA\nh2,0,-1\nh3,1,1\n").unwrap();
        let m = read_genotype_csv(&path).unwrap();
        assert_eq!(m.n_hybrids(), 3);
        assert_eq!(m.n_missing(), 1);
        assert_eq!(m.values()[[0, 1]], MISSING_CODE);
    }

    #[test]
    fn genotype_csv_rejects_bad_code() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("genotype.csv");
        std::fs::write(&path, "hybrid_id,m_1\nh1,2\n").unwrap();
        let err = read_genotype_csv(&path).unwrap_err();
        match err {
            Error::MalformedRow { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn yield_difference_is_definitional() {
        let rec = PerfRecord {
            hybrid_id: "h".into(),
            location_id: "l".into(),
            year: 2016,
            yield_bu: 100.0,
            check_yield: 110.0,
        };
        assert_eq!(rec.yield_difference(), -10.0);
    }

    #[test]
    fn wide_genotype_header_parses_full_marker_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("genotype.csv");
        let p = 19_465;
        let mut header = String::from("hybrid_id");
        for j in 0..p {
            header.push_str(&format!(",m_{:05}", j + 1));
        }
        let mut row = String::from("h1");
        for _ in 0..p {
            row.push_str(",0");
        }
        std::fs::write(&path, format!("{header}\n{row}\n")).unwrap();
        let m = read_genotype_csv(&path).unwrap();
        assert_eq!(m.n_markers(), p);
    }

    #[test]
    fn join_is_cartesian_complete_when_all_keys_resolve() {
        let outcome = join_trials(small_markers(), small_env(&[2016]), product_performance(&[2016]));
        assert_eq!(outcome.dataset.n(), 4);
        assert!(outcome.rejections.is_empty());
    }

    #[test]
    fn join_rejects_unknown_hybrid() {
        let perf = PerformanceTable::new(vec![PerfRecord {
            hybrid_id: "nope".into(),
            location_id: "l1".into(),
            year: 2016,
            yield_bu: 1.0,
            check_yield: 1.0,
        }])
        .unwrap();
        let outcome = join_trials(small_markers(), small_env(&[2016]), perf);
        assert_eq!(outcome.dataset.n(), 0);
        assert_eq!(outcome.rejections.len(), 1);
        assert!(outcome.rejections[0].reason.contains("unknown hybrid"));
    }

    #[test]
    fn join_count_matches_full_product_at_reference_scale() {
        // 89 hybrids x 139 locations x 12 years = 148,452 trials.
        let hybrids: Vec<String> = (0..89).map(|i| format!("h{i}")).collect();
        let markers = MarkerMatrix::new(
            hybrids.clone(),
            vec!["m_1".into()],
            Array2::zeros((89, 1)),
        )
        .unwrap();
        let years: Vec<i32> = (2005..=2016).collect();
        let mut weather = Vec::new();
        let mut soil = Vec::new();
        for l in 0..139 {
            let id = format!("l{l}");
            soil.push((id.clone(), vec![0.0; SOIL_VARS]));
            for &y in &years {
                weather.push((id.clone(), y, vec![0.0; WEATHER_VARS]));
            }
        }
        let env = EnvironmentTable::new(weather, soil).unwrap();
        let mut records = Vec::new();
        for h in &hybrids {
            for l in 0..139 {
                for &y in &years {
                    records.push(PerfRecord {
                        hybrid_id: h.clone(),
                        location_id: format!("l{l}"),
                        year: y,
                        yield_bu: 1.0,
                        check_yield: 1.0,
                    });
                }
            }
        }
        let perf = PerformanceTable::new(records).unwrap();
        let outcome = join_trials(markers, env, perf);
        assert_eq!(outcome.dataset.n(), 148_452);
        assert!(outcome.rejections.is_empty());
    }

    #[test]
    fn split_errors_when_no_cutoff_rows() {
        let outcome = join_trials(small_markers(), small_env(&[2015]), product_performance(&[2015]));
        let err = split_by_year(
            &outcome.dataset,
            SplitRule {
                cutoff_year: 2016,
                validation_fraction: 0.5,
                seed: 1,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidData(_)));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let outcome = join_trials(
            small_markers(),
            small_env(&[2015, 2016]),
            product_performance(&[2015, 2016]),
        );
        let rule = SplitRule {
            cutoff_year: 2016,
            validation_fraction: 0.5,
            seed: 42,
        };
        let a = split_by_year(&outcome.dataset, rule).unwrap();
        let b = split_by_year(&outcome.dataset, rule).unwrap();
        assert_eq!(a.train.rows(), b.train.rows());
        assert_eq!(a.validation.rows(), b.validation.rows());
        assert_eq!(a.train.n() + a.validation.n(), outcome.dataset.n());
        for row in a.validation.rows() {
            assert_eq!(row.year, 2016);
        }
    }

    #[test]
    fn duplicate_performance_key_rejected() {
        let rec = PerfRecord {
            hybrid_id: "h".into(),
            location_id: "l".into(),
            year: 2016,
            yield_bu: 1.0,
            check_yield: 1.0,
        };
        let err = PerformanceTable::new(vec![rec.clone(), rec]).unwrap_err();
        assert!(matches!(err, Error::DuplicateKey { .. }));
    }

    #[test]
    fn weather_header_validated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weather.csv");
        std::fs::write(&path, "location_id,year,w_01\nl1,2016,0.5\n").unwrap();
        assert!(matches!(
            read_weather_csv(&path).unwrap_err(),
            Error::BadHeader { .. }
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let markers = MarkerMatrix::new(
            vec!["h1".into(), "h2".into()],
            vec!["m_1".into(), "m_2".into()],
            array![[1, MISSING_CODE], [0, -1]],
        )
        .unwrap();
        let weather = vec![
            ("l1".to_string(), 2015, vec![0.1234567890123; WEATHER_VARS]),
            ("l1".to_string(), 2016, vec![-3.5e-7; WEATHER_VARS]),
        ];
        let soil = vec![("l1".to_string(), vec![1.5; SOIL_VARS])];
        let perf = PerformanceTable::new(vec![PerfRecord {
            hybrid_id: "h1".into(),
            location_id: "l1".into(),
            year: 2016,
            yield_bu: 123.45600000000002,
            check_yield: 120.0,
        }])
        .unwrap();

        let gp = dir.path().join("genotype.csv");
        let wp = dir.path().join("weather.csv");
        let sp = dir.path().join("soil.csv");
        let pp = dir.path().join("performance.csv");
        write_genotype_csv(&markers, &gp).unwrap();
        write_weather_csv(&weather, &wp, false).unwrap();
        write_soil_csv(&soil, &sp).unwrap();
        write_performance_csv(&perf, &pp).unwrap();

        let (m2, env2, perf2) = ingest_tables(&gp, &wp, &sp, &pp).unwrap();
        assert_eq!(m2.values(), markers.values());
        assert_eq!(m2.hybrid_ids(), markers.hybrid_ids());
        let w = env2.weather_at(env2.location_index("l1").unwrap(), 2015).unwrap();
        assert_eq!(w[0], 0.1234567890123);
        let w = env2.weather_at(env2.location_index("l1").unwrap(), 2016).unwrap();
        assert_eq!(w[3], -3.5e-7);
        assert_eq!(perf2.records()[0].yield_bu, 123.45600000000002);

        // Serialize again; bytes must be identical.
        let gp2 = dir.path().join("genotype2.csv");
        write_genotype_csv(&m2, &gp2).unwrap();
        assert_eq!(
            std::fs::read(&gp).unwrap(),
            std::fs::read(&gp2).unwrap()
        );
    }
}
