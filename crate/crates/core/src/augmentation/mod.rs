//! Synthetic warm-up rows from a conditional tabular GAN, with
//! plausibility filtering against per-column ranges.

pub mod gan;
pub mod nn;
pub mod normalizer;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::engine::ExtraRows;

pub use gan::{train_gan_matrix, EpochLoss, GanConfig, GeneratorSnapshot, TrainedGan};
pub use normalizer::{ModeNormalizer, NormalizerError};

/// Number of condition classes (low/mid/high target).
pub const TERCILES: usize = 3;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{rows} training rows; at least {needed} are needed")]
    TooFewRows { rows: usize, needed: usize },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("sampling produced only {produced} finite rows of {requested}")]
    Sampling { produced: usize, requested: usize },
    #[error("need {requested} plausible synthetic rows but the batch has {available} (short by {})", requested - available)]
    Shortfall { requested: usize, available: usize },
    #[error("no plausibility range for column {0:?}")]
    MissingRange(String),
    #[error("column mismatch: expected {expected:?}, got {got:?}")]
    Columns { expected: Vec<String>, got: Vec<String> },
    #[error(transparent)]
    Normalizer(#[from] NormalizerError),
    #[error("ranges file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which condition class the generator is asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "tercile")]
pub enum Condition {
    Tercile(usize),
    /// Each row draws its class uniformly.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Training epochs of the generator that produced the rows.
    pub epochs: usize,
    pub config_hash: String,
    /// Rows redrawn because they decoded to non-finite values.
    pub resampled: usize,
    /// Rows removed by plausibility filtering.
    pub excluded: usize,
}

/// Generated rows in the units of the training table; the last column is
/// the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBatch {
    pub columns: Vec<String>,
    pub rows: DMatrix<f64>,
    pub conditions: Vec<usize>,
    pub plausible: Vec<bool>,
    pub provenance: Provenance,
}

impl SyntheticBatch {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plausible_count(&self) -> usize {
        self.plausible.iter().filter(|p| **p).count()
    }

    /// Writes the rows as CSV with a trailing `origin` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AugmentError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.columns.clone();
        header.push("origin".into());
        w.write_record(&header)?;
        for row in self.rows.row_iter() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push("synthetic".into());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Allowed interval per column name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlausibleRanges(pub BTreeMap<String, Range>);

impl PlausibleRanges {
    /// Per-column observed `[min, max]` widened by `expand` times the span
    /// on each side.
    pub fn from_data(columns: &[String], data: &DMatrix<f64>, expand: f64) -> Self {
        let mut map = BTreeMap::new();
        for (j, name) in columns.iter().enumerate() {
            let col = data.column(j);
            let (lo, hi) = (col.min(), col.max());
            let pad = expand * (hi - lo);
            map.insert(name.clone(), Range { min: lo - pad, max: hi + pad });
        }
        PlausibleRanges(map)
    }

    /// Default ranges: the table's span expanded by 10% on each side.
    pub fn from_dataset(ds: &Dataset) -> Self {
        let (columns, data) = table(ds);
        Self::from_data(&columns, &data, 0.1)
    }

    pub fn from_json<R: Read>(input: R) -> Result<Self, AugmentError> {
        let ranges: Self = serde_json::from_reader(input)?;
        for (name, r) in &ranges.0 {
            if !(r.min <= r.max) {
                return Err(AugmentError::Config(format!("range for {name:?} has min > max")));
            }
        }
        Ok(ranges)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ranges serialize")
    }
}

/// Flags every row against `ranges` and drops the implausible ones, adding
/// their count to the provenance.
pub fn filter_plausible(batch: &SyntheticBatch, ranges: &PlausibleRanges) -> Result<SyntheticBatch, AugmentError> {
    let bounds: Vec<Range> = batch
        .columns
        .iter()
        .map(|c| ranges.0.get(c).copied().ok_or_else(|| AugmentError::MissingRange(c.clone())))
        .collect::<Result<_, _>>()?;
    let keep: Vec<usize> = (0..batch.len())
        .filter(|&i| bounds.iter().enumerate().all(|(j, r)| r.contains(batch.rows[(i, j)])))
        .collect();
    let mut provenance = batch.provenance.clone();
    provenance.excluded += batch.len() - keep.len();
    Ok(SyntheticBatch {
        columns: batch.columns.clone(),
        rows: batch.rows.select_rows(&keep),
        conditions: keep.iter().map(|&i| batch.conditions[i]).collect(),
        plausible: vec![true; keep.len()],
        provenance,
    })
}

/// Whether a warm-up row was measured or generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

/// Real warm-up rows followed by synthetic ones.
#[derive(Debug, Clone)]
pub struct AugmentedWarmup {
    pub dataset: Dataset,
    pub origins: Vec<Origin>,
}

impl AugmentedWarmup {
    pub fn count(&self, origin: Origin) -> usize {
        self.origins.iter().filter(|o| **o == origin).count()
    }

    /// The synthetic rows alone, in the form the campaign engine takes.
    pub fn synthetic_rows(&self) -> ExtraRows {
        let idx: Vec<usize> = (0..self.origins.len())
            .filter(|&i| self.origins[i] == Origin::Synthetic)
            .collect();
        ExtraRows {
            features: self.dataset.features().select_rows(&idx),
            targets: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.dataset.targets()[i])),
        }
    }
}

/// Column names and values of a table, target last.
pub fn table(ds: &Dataset) -> (Vec<String>, DMatrix<f64>) {
    let columns: Vec<String> = ds.schema().columns().map(str::to_string).collect();
    let f = ds.features();
    let data = DMatrix::from_fn(ds.len(), f.ncols() + 1, |i, j| {
        if j < f.ncols() {
            f[(i, j)]
        } else {
            ds.targets()[i]
        }
    });
    (columns, data)
}

/// Trains on a table in whatever units it is stored in; sampled rows come
/// back in the same units.
pub fn train_gan(ds: &Dataset, cfg: &GanConfig) -> Result<TrainedGan, AugmentError> {
    let (columns, data) = table(ds);
    train_gan_matrix(&data, columns, cfg)
}

/// Appends the first `n_synth` plausible rows of `batch` to `real`.
pub fn augment_warmup(real: &Dataset, batch: &SyntheticBatch, n_synth: usize) -> Result<AugmentedWarmup, AugmentError> {
    let (columns, data) = table(real);
    if batch.columns != columns {
        return Err(AugmentError::Columns {
            expected: columns,
            got: batch.columns.clone(),
        });
    }
    let picked: Vec<usize> = (0..batch.len()).filter(|&i| batch.plausible[i]).take(n_synth).collect();
    if picked.len() < n_synth {
        return Err(AugmentError::Shortfall {
            requested: n_synth,
            available: picked.len(),
        });
    }
    let n_real = real.len();
    let d = data.ncols() - 1;
    let total = n_real + n_synth;
    let cell = |i: usize, j: usize| {
        if i < n_real {
            data[(i, j)]
        } else {
            batch.rows[(picked[i - n_real], j)]
        }
    };
    let features = DMatrix::from_fn(total, d, cell);
    let targets = DVector::from_fn(total, |i, _| cell(i, d));
    let mut origins = vec![Origin::Real; n_real];
    origins.extend(std::iter::repeat_n(Origin::Synthetic, n_synth));
    Ok(AugmentedWarmup {
        dataset: Dataset::from_parts_unchecked(real.schema().clone(), features, targets, real.scaling().cloned()),
        origins,
    })
}
