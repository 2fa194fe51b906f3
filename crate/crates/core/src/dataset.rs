//! Experimental tables: ingestion, cleaning, standardization, splitting and
//! candidate pools.
//!
//! Every downstream module sees a [`Dataset`]: six process/material features
//! and one melt-pool target, free of missing cells and exact duplicates. The
//! standardization `(x - mean) / s` uses the sample (n - 1) standard deviation
//! and is applied to the target as well, so errors are reported in
//! standardized target units.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Number of input features in a melt-pool schema.
pub const FEATURE_COUNT: usize = 6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at line {line}, column `{column}`: cannot read {value:?} as a number")]
    Parse {
        line: usize,
        column: String,
        value: String,
    },
    #[error("dataset is empty after cleaning ({rows_in} rows read)")]
    Empty { rows_in: usize },
    #[error("column `{0}` has zero spread and cannot be standardized")]
    DegenerateScale(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("budget error: {0}")]
    Budget(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Melt-pool dimension used as the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Depth,
    Width,
    Length,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Depth, Target::Width, Target::Length];

    pub fn name(self) -> &'static str {
        match self {
            Target::Depth => "depth",
            Target::Width => "width",
            Target::Length => "length",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Target {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "depth" => Ok(Target::Depth),
            "width" => Ok(Target::Width),
            "length" => Ok(Target::Length),
            other => Err(DatasetError::Schema(format!("unknown target `{other}`"))),
        }
    }
}

/// Column layout of an experiment table: six ordered feature columns and one
/// target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct FeatureSchema {
    features: Vec<String>,
    target: Target,
    target_column: String,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    features: Vec<String>,
    target: Target,
    #[serde(default)]
    target_column: Option<String>,
}

impl TryFrom<RawSchema> for FeatureSchema {
    type Error = DatasetError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        let column = raw.target_column.unwrap_or_else(|| raw.target.name().to_string());
        FeatureSchema::new(raw.features, raw.target, column)
    }
}

impl From<FeatureSchema> for RawSchema {
    fn from(s: FeatureSchema) -> Self {
        RawSchema {
            features: s.features,
            target: s.target,
            target_column: Some(s.target_column),
        }
    }
}

impl FeatureSchema {
    pub fn new(
        features: Vec<String>,
        target: Target,
        target_column: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        if features.len() != FEATURE_COUNT {
            return Err(DatasetError::Schema(format!(
                "expected {FEATURE_COUNT} feature columns, got {}",
                features.len()
            )));
        }
        let target_column = target_column.into();
        let mut seen = HashSet::new();
        for name in features.iter().chain(std::iter::once(&target_column)) {
            if name.trim().is_empty() {
                return Err(DatasetError::Schema("empty column name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(DatasetError::Schema(format!("duplicate column `{name}`")));
            }
        }
        Ok(FeatureSchema {
            features,
            target,
            target_column,
        })
    }

    /// Default laser powder-bed-fusion layout: power, velocity, beam
    /// diameter, density, melting temperature, thermal conductivity.
    pub fn meltpool(target: Target) -> Self {
        let features = [
            "laser_power",
            "scan_velocity",
            "beam_diameter",
            "density",
            "melting_temperature",
            "thermal_conductivity",
        ]
        .map(String::from)
        .to_vec();
        FeatureSchema::new(features, target, target.name()).expect("static schema is valid")
    }

    /// Schema for synthetic tasks with generic `x1..x6` columns and target `y`.
    pub fn synthetic() -> Self {
        let features = (1..=FEATURE_COUNT).map(|i| format!("x{i}")).collect();
        FeatureSchema::new(features, Target::Depth, "y").expect("static schema is valid")
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn target_column(&self) -> &str {
        &self.target_column
    }

    /// All column names, features first, target last.
    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.features
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(self.target_column.as_str()))
    }
}

/// Mean and sample standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub std: f64,
}

impl ColumnScale {
    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Parameters needed to map standardized values back to raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub features: Vec<ColumnScale>,
    pub target: ColumnScale,
}

impl Scaling {
    pub fn normalize_point(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.features).map(|(x, c)| c.forward(*x)).collect()
    }

    pub fn denormalize_point(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.features).map(|(x, c)| c.inverse(*x)).collect()
    }
}

/// Summary of rows removed while cleaning an input table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub dropped_missing: usize,
    pub dropped_duplicate: usize,
    pub rows_in: usize,
    pub rows_out: usize,
}

/// A clean experiment table. Values are raw unless [`Dataset::scaling`]
/// returns `Some`, in which case they are standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    features: DMatrix<f64>,
    targets: DVector<f64>,
    scaling: Option<Scaling>,
}

fn row_key(features: &[f64], target: f64) -> Vec<u64> {
    // +0.0 folds -0.0 onto 0.0 so both count as the same value.
    features
        .iter()
        .chain(std::iter::once(&target))
        .map(|v| (v + 0.0).to_bits())
        .collect()
}

fn sample_scale(values: impl Iterator<Item = f64> + Clone) -> ColumnScale {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    let std = if n > 1.0 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    ColumnScale { mean, std }
}

impl Dataset {
    /// Builds a dataset from raw rows, enforcing the no-missing and
    /// no-duplicate invariants.
    pub fn from_rows(
        schema: FeatureSchema,
        rows: &[Vec<f64>],
        targets: &[f64],
    ) -> Result<Self, DatasetError> {
        if rows.len() != targets.len() {
            return Err(DatasetError::Schema(format!(
                "{} feature rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        if rows.is_empty() {
            return Err(DatasetError::Empty { rows_in: 0 });
        }
        let mut seen = HashSet::with_capacity(rows.len());
        for (i, (row, &t)) in rows.iter().zip(targets).enumerate() {
            if row.len() != FEATURE_COUNT {
                return Err(DatasetError::Schema(format!(
                    "row {i} has {} values, expected {FEATURE_COUNT}",
                    row.len()
                )));
            }
            if !row.iter().all(|v| v.is_finite()) || !t.is_finite() {
                return Err(DatasetError::Schema(format!("row {i} contains a non-finite value")));
            }
            if !seen.insert(row_key(row, t)) {
                return Err(DatasetError::Schema(format!("row {i} duplicates an earlier row")));
            }
        }
        let features = DMatrix::from_fn(rows.len(), FEATURE_COUNT, |i, j| rows[i][j]);
        Ok(Dataset {
            schema,
            features,
            targets: DVector::from_column_slice(targets),
            scaling: None,
        })
    }

    pub(crate) fn from_parts_unchecked(
        schema: FeatureSchema,
        features: DMatrix<f64>,
        targets: DVector<f64>,
        scaling: Option<Scaling>,
    ) -> Self {
        Dataset {
            schema,
            features,
            targets,
            scaling,
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn row(&self, i: usize) -> RowDVector<f64> {
        self.features.row(i).into_owned()
    }

    pub fn scaling(&self) -> Option<&Scaling> {
        self.scaling.as_ref()
    }

    /// Restricts the table to `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let features = self.features.select_rows(rows);
        let targets = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.targets[i]));
        Dataset {
            schema: self.schema.clone(),
            features,
            targets,
            scaling: self.scaling.clone(),
        }
    }

    /// Standardizes every feature column and the target with the sample
    /// mean and sample standard deviation.
    ///
    /// Applied to an already standardized table the statistics are
    /// re-estimated and composed with the stored ones, so
    /// [`Dataset::denormalize`] still recovers the raw values.
    pub fn normalize(&self) -> Result<Dataset, DatasetError> {
        let n = self.len();
        if n < 2 {
            return Err(DatasetError::DegenerateScale(
                self.schema.features[0].clone(),
            ));
        }
        let mut scales = Vec::with_capacity(FEATURE_COUNT);
        for (j, name) in self.schema.features.iter().enumerate() {
            let col = self.features.column(j);
            let scale = sample_scale(col.iter().copied());
            if !(scale.std > 0.0) || !scale.std.is_finite() {
                return Err(DatasetError::DegenerateScale(name.clone()));
            }
            scales.push(scale);
        }
        let target_scale = sample_scale(self.targets.iter().copied());
        if !(target_scale.std > 0.0) || !target_scale.std.is_finite() {
            return Err(DatasetError::DegenerateScale(self.schema.target_column.clone()));
        }

        let features =
            DMatrix::from_fn(n, FEATURE_COUNT, |i, j| scales[j].forward(self.features[(i, j)]));
        let targets = self.targets.map(|t| target_scale.forward(t));

        let composed = match &self.scaling {
            None => Scaling {
                features: scales,
                target: target_scale,
            },
            Some(prev) => {
                let compose = |outer: &ColumnScale, inner: &ColumnScale| ColumnScale {
                    mean: outer.inverse(inner.mean),
                    std: outer.std * inner.std,
                };
                Scaling {
                    features: prev
                        .features
                        .iter()
                        .zip(&scales)
                        .map(|(o, i)| compose(o, i))
                        .collect(),
                    target: compose(&prev.target, &target_scale),
                }
            }
        };
        Ok(Dataset {
            schema: self.schema.clone(),
            features,
            targets,
            scaling: Some(composed),
        })
    }

    /// Maps a standardized table back to raw units; a raw table is returned
    /// unchanged.
    pub fn denormalize(&self) -> Dataset {
        match &self.scaling {
            None => self.clone(),
            Some(s) => Dataset {
                schema: self.schema.clone(),
                features: DMatrix::from_fn(self.len(), FEATURE_COUNT, |i, j| {
                    s.features[j].inverse(self.features[(i, j)])
                }),
                targets: self.targets.map(|t| s.target.inverse(t)),
                scaling: None,
            },
        }
    }

    /// Applies another table's scaling to this (raw) table.
    pub fn normalize_with(&self, scaling: &Scaling) -> Dataset {
        let raw = self.denormalize();
        Dataset {
            schema: self.schema.clone(),
            features: DMatrix::from_fn(self.len(), FEATURE_COUNT, |i, j| {
                scaling.features[j].forward(raw.features[(i, j)])
            }),
            targets: raw.targets.map(|t| scaling.target.forward(t)),
            scaling: Some(scaling.clone()),
        }
    }

    /// Writes the table (raw units) as CSV with a header row.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), DatasetError> {
        let raw = self.denormalize();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.schema.columns())?;
        for i in 0..raw.len() {
            let mut rec: Vec<String> =
                (0..FEATURE_COUNT).map(|j| raw.features[(i, j)].to_string()).collect();
            rec.push(raw.targets[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty()
        || ["na", "nan", "null", "none", "n/a"]
            .iter()
            .any(|m| c.eq_ignore_ascii_case(m))
}

/// Reads a CSV table, keeps the schema's columns, drops rows with a missing
/// value and exact duplicates (first occurrence kept).
pub fn load_and_clean(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
) -> Result<(Dataset, CleaningReport), DatasetError> {
    let file = std::fs::File::open(path.as_ref())?;
    clean_from_reader(file, schema)
}

pub fn clean_from_reader<R: Read>(
    reader: R,
    schema: &FeatureSchema,
) -> Result<(Dataset, CleaningReport), DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let positions: Vec<usize> = schema
        .columns()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| DatasetError::Schema(format!("missing column `{name}`")))
        })
        .collect::<Result<_, _>>()?;
    let names: Vec<&str> = schema.columns().collect();

    let mut report = CleaningReport {
        dropped_missing: 0,
        dropped_duplicate: 0,
        rows_in: 0,
        rows_out: 0,
    };
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    let mut targets = Vec::new();

    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        report.rows_in += 1;
        // header is line 1
        let line = r + 2;
        let mut values = Vec::with_capacity(FEATURE_COUNT + 1);
        let mut missing = false;
        for (&pos, &name) in positions.iter().zip(&names) {
            let cell = record.get(pos).unwrap_or("");
            if is_missing(cell) {
                missing = true;
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| DatasetError::Parse {
                line,
                column: name.to_string(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::Parse {
                    line,
                    column: name.to_string(),
                    value: cell.to_string(),
                });
            }
            values.push(v);
        }
        if missing {
            report.dropped_missing += 1;
            continue;
        }
        let target = values.pop().expect("target column present");
        if !seen.insert(row_key(&values, target)) {
            report.dropped_duplicate += 1;
            continue;
        }
        rows.push(values);
        targets.push(target);
    }
    report.rows_out = rows.len();
    if rows.is_empty() {
        return Err(DatasetError::Empty {
            rows_in: report.rows_in,
        });
    }
    let ds = Dataset::from_rows(schema.clone(), &rows, &targets)?;
    Ok((ds, report))
}

/// Train/test partition of a parent table. Row indices refer to the parent.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Number of training rows for a split: `floor(n * fraction)`.
pub fn train_size(n: usize, fraction: f64) -> usize {
    // The epsilon absorbs representation error such as 0.7 * 10 = 6.999...
    ((n as f64) * fraction + 1e-9).floor() as usize
}

/// Seeded random partition into train and test.
pub fn split(ds: &Dataset, fraction: f64, seed: u64) -> Result<SplitDataset, DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::Split(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = ds.len();
    let n_train = train_size(n, fraction);
    if n_train == 0 || n_train == n {
        return Err(DatasetError::Split(format!(
            "fraction {fraction} of {n} rows leaves an empty partition"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut train_rows = order[..n_train].to_vec();
    let mut test_rows = order[n_train..].to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(SplitDataset {
        train: ds.subset(&train_rows),
        test: ds.subset(&test_rows),
        train_rows,
        test_rows,
        seed,
        train_fraction: fraction,
    })
}

/// Candidate rows not yet used as experiments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    indices: Vec<usize>,
    consumed: BTreeSet<usize>,
}

impl CandidatePool {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        CandidatePool {
            indices,
            consumed: BTreeSet::new(),
        }
    }

    /// Remaining candidates, ascending.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn consumed(&self) -> &BTreeSet<usize> {
        &self.consumed
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `|indices| + |consumed|`, constant over a campaign.
    pub fn total(&self) -> usize {
        self.indices.len() + self.consumed.len()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    /// Moves `index` from the available set to the consumed set.
    pub fn consume(&mut self, index: usize) -> bool {
        match self.indices.binary_search(&index) {
            Ok(pos) => {
                self.indices.remove(pos);
                self.consumed.insert(index);
                true
            }
            Err(_) => false,
        }
    }
}

/// Draws `warmup_count` of `n` indices without replacement; the rest form the
/// candidate pool.
pub fn draw_warmup(
    n: usize,
    warmup_count: usize,
    seed: u64,
) -> Result<(Vec<usize>, CandidatePool), DatasetError> {
    if warmup_count >= n {
        return Err(DatasetError::Budget(format!(
            "warm-up of {warmup_count} leaves no candidates among {n} rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let warmup = order[..warmup_count].to_vec();
    let pool = CandidatePool::new(order[warmup_count..].to_vec());
    Ok((warmup, pool))
}

pub fn make_pool(
    train: &Dataset,
    warmup_count: usize,
    seed: u64,
) -> Result<(Vec<usize>, CandidatePool), DatasetError> {
    draw_warmup(train.len(), warmup_count, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::meltpool(Target::Depth)
    }

    fn header() -> String {
        schema().columns().collect::<Vec<_>>().join(",")
    }

    fn random_dataset(n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut r = rng::seeded(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..FEATURE_COUNT).map(|_| r.random_range(-5.0..50.0)).collect())
            .collect();
        let targets: Vec<f64> = (0..n).map(|_| r.random_range(10.0..300.0)).collect();
        Dataset::from_rows(schema(), &rows, &targets).unwrap()
    }

    #[test]
    fn schema_requires_six_unique_features() {
        let five = (0..5).map(|i| format!("f{i}")).collect();
        assert!(FeatureSchema::new(five, Target::Width, "width").is_err());
        let mut dup: Vec<String> = (0..6).map(|i| format!("f{i}")).collect();
        dup[5] = "f0".into();
        assert!(FeatureSchema::new(dup, Target::Width, "width").is_err());
        let clash: Vec<String> = (0..6).map(|i| format!("f{i}")).collect();
        assert!(FeatureSchema::new(clash, Target::Width, "f3").is_err());
    }

    #[test]
    fn schema_json_defaults_target_column() {
        let s: FeatureSchema = serde_json::from_str(
            r#"{"features":["a","b","c","d","e","f"],"target":"length"}"#,
        )
        .unwrap();
        assert_eq!(s.target_column(), "length");
    }

    #[test]
    fn ten_row_fixture_drops_duplicates_and_missing() {
        // rows 4 and 7 duplicate row 1 and row 2; row 9 lacks density
        let csv = format!(
            "{}\n\
             200,800,80,7.9,1700,20,110\n\
             250,900,80,7.9,1700,20,120\n\
             300,1000,80,7.9,1700,20,130\n\
             200,800,80,7.9,1700,20,110\n\
             350,1100,90,8.1,1650,15,150\n\
             400,1200,90,8.1,1650,15,160\n\
             250,900,80,7.9,1700,20,120\n\
             450,1300,100,4.4,1900,7,170\n\
             500,1400,100,,1900,7,180\n\
             550,1500,100,4.4,1900,7,190\n",
            header()
        );
        let (ds, report) = clean_from_reader(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.len(), 7);
        assert_eq!(
            report,
            CleaningReport {
                dropped_missing: 1,
                dropped_duplicate: 2,
                rows_in: 10,
                rows_out: 7
            }
        );
        assert_eq!(
            serde_json::to_value(report).unwrap(),
            serde_json::json!({"dropped_missing":1,"dropped_duplicate":2,"rows_in":10,"rows_out":7})
        );
    }

    #[test]
    fn clean_table_is_untouched() {
        let csv = format!(
            "{}\n1,2,3,4,5,6,7\n2,3,4,5,6,7,8\n3,4,5,6,7,8,9\n",
            header()
        );
        let (ds, report) = clean_from_reader(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(report.rows_in, report.rows_out);
    }

    #[test]
    fn extra_columns_are_ignored_and_order_is_free() {
        let csv = "depth,note,thermal_conductivity,melting_temperature,density,beam_diameter,scan_velocity,laser_power\n\
                   100,x,20,1700,7.9,80,800,200\n";
        let (ds, _) = clean_from_reader(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.features()[(0, 0)], 200.0);
        assert_eq!(ds.targets()[0], 100.0);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "laser_power,scan_velocity\n1,2\n";
        let err = clean_from_reader(csv.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, DatasetError::Schema(m) if m.contains("beam_diameter")));
    }

    #[test]
    fn non_numeric_cell_reports_location() {
        let csv = format!("{}\n1,2,3,4,5,6,7\n1,2,abc,4,5,6,7\n", header());
        match clean_from_reader(csv.as_bytes(), &schema()).unwrap_err() {
            DatasetError::Parse { line, column, value } => {
                assert_eq!(line, 3);
                assert_eq!(column, "beam_diameter");
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_rows_missing_is_empty_error() {
        let csv = format!("{}\n1,2,,4,5,6,7\n", header());
        assert!(matches!(
            clean_from_reader(csv.as_bytes(), &schema()),
            Err(DatasetError::Empty { rows_in: 1 })
        ));
    }

    #[test]
    fn cleaning_is_idempotent() {
        let csv = format!(
            "{}\n1,2,3,4,5,6,7\n1,2,3,4,5,6,7\n2,2,3,4,5,6,NA\n4,2,3,4,5,6,7\n",
            header()
        );
        let (once, _) = clean_from_reader(csv.as_bytes(), &schema()).unwrap();
        let mut buf = Vec::new();
        once.write_csv(&mut buf).unwrap();
        let (twice, report) = clean_from_reader(buf.as_slice(), &schema()).unwrap();
        assert_eq!(once, twice);
        assert_eq!(report.rows_in, report.rows_out);
    }

    #[test]
    fn normalize_hand_column() {
        let rows: Vec<Vec<f64>> = [2.0, 4.0, 6.0]
            .iter()
            .map(|&v| vec![v, v * 3.0, v + 1.0, -v, v * v, 1.0 / v])
            .collect();
        let ds = Dataset::from_rows(schema(), &rows, &[1.0, 2.0, 4.0]).unwrap();
        let z = ds.normalize().unwrap();
        let col: Vec<f64> = z.features().column(0).iter().copied().collect();
        assert_abs_diff_eq!(col[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(col[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(col[2], 1.0, epsilon = 1e-12);
        let s = z.scaling().unwrap();
        assert_abs_diff_eq!(s.features[0].mean, 4.0);
        assert_abs_diff_eq!(s.features[0].std, 2.0);
    }

    #[test]
    fn constant_column_is_rejected_by_name() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| vec![i as f64, 1.0, 5.0, i as f64 * 2.0, 3.0 + i as f64, 7.0])
            .collect();
        let ds = Dataset::from_rows(schema(), &rows, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        match ds.normalize() {
            Err(DatasetError::DegenerateScale(name)) => assert_eq!(name, "scan_velocity"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn normalizing_twice_is_near_identity() {
        let z = random_dataset(40, 3).normalize().unwrap();
        let zz = z.normalize().unwrap();
        assert!((z.features() - zz.features()).amax() < 1e-9);
        assert!((z.targets() - zz.targets()).amax() < 1e-9);
        // the composed scaling still inverts to raw values
        let raw = random_dataset(40, 3);
        assert!((zz.denormalize().features() - raw.features()).amax() < 1e-9);
    }

    #[test]
    fn published_split_counts() {
        for (n, train, test) in [(1115, 836, 279), (850, 637, 213), (257, 192, 65)] {
            assert_eq!(train_size(n, 0.75), train);
            assert_eq!(n - train_size(n, 0.75), test);
        }
        let ds = random_dataset(1115, 1);
        let sp = split(&ds, 0.75, 11).unwrap();
        assert_eq!((sp.train.len(), sp.test.len()), (836, 279));
    }

    #[test]
    fn split_is_seeded() {
        let ds = random_dataset(4, 9);
        let a = split(&ds, 0.75, 1).unwrap();
        let b = split(&ds, 0.75, 1).unwrap();
        assert_eq!(a.train_rows, b.train_rows);
        let c = split(&ds, 0.75, 2).unwrap();
        assert_eq!(c.train.len(), 3);
        assert_eq!(c.test.len(), 1);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let ds = random_dataset(4, 9);
        assert!(split(&ds, 0.0, 1).is_err());
        assert!(split(&ds, 1.0, 1).is_err());
        assert!(split(&ds, 0.1, 1).is_err());
    }

    #[test]
    fn pool_sizes() {
        let ds = random_dataset(836, 5);
        let (w, pool) = make_pool(&ds, 50, 3).unwrap();
        assert_eq!(w.len(), 50);
        assert_eq!(pool.len(), 786);
        let (w, pool) = make_pool(&ds, 0, 3).unwrap();
        assert!(w.is_empty());
        assert_eq!(pool.len(), 836);
        let (_, pool) = make_pool(&ds, 835, 3).unwrap();
        assert_eq!(pool.len(), 1);
        assert!(matches!(make_pool(&ds, 836, 3), Err(DatasetError::Budget(_))));
    }

    #[test]
    fn pool_conservation_under_consumption() {
        let (_, mut pool) = draw_warmup(30, 5, 1).unwrap();
        let total = pool.total();
        for idx in pool.indices().to_vec().into_iter().step_by(3) {
            assert!(pool.consume(idx));
            assert!(!pool.consume(idx));
            assert_eq!(pool.total(), total);
            assert!(!pool.contains(idx));
        }
    }

    proptest! {
        #[test]
        fn normalize_round_trip(seed in 0u64..1000, n in 3usize..60) {
            let raw = random_dataset(n, seed);
            let z = raw.normalize().unwrap();
            for j in 0..FEATURE_COUNT {
                let col = z.features().column(j);
                let s = sample_scale(col.iter().copied());
                prop_assert!(s.mean.abs() < 1e-9);
                prop_assert!((s.std - 1.0).abs() < 1e-9);
            }
            let back = z.denormalize();
            for (a, b) in back.features().iter().zip(raw.features().iter()) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
            for (a, b) in back.targets().iter().zip(raw.targets().iter()) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }

        #[test]
        fn split_partitions_parent(seed in 0u64..1000, n in 2usize..200, frac in 0.3f64..0.9) {
            let ds = random_dataset(n, seed);
            if let Ok(sp) = split(&ds, frac, seed) {
                let mut all: Vec<usize> = sp.train_rows.iter().chain(&sp.test_rows).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert_eq!(sp.train.len(), train_size(n, frac));
            }
        }
    }
}
