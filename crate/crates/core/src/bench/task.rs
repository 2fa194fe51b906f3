use serde::{Deserialize, Serialize};

use super::{BenchData, BenchError, ScenarioSpec};
use crate::dataset::{split, SplitDataset, Target};
use crate::engine::{RffFunction, SyntheticOracle, TestFunction};
use crate::rng::derive_seed;

/// A GP-like random 6-D function sampled on uniform points in the
/// standardized box, split into a candidate pool and a fixed test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub rff_features: usize,
    pub noise_std: f64,
    pub rows: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SyntheticTask {
    /// Desk-scale task: 849 training rows (a pool of 799 after a 50-row
    /// warm-up) and 284 test rows. The length scale is the RMS distance
    /// between two uniform points of the box, `sqrt(2 * 6 * (2 * sqrt(3))^2 / 12)`.
    pub fn desk(seed: u64) -> Self {
        SyntheticTask {
            length_scale: 12f64.sqrt(),
            signal_variance: 1.0,
            rff_features: 500,
            noise_std: 0.05,
            rows: 1133,
            train_fraction: 0.75,
            seed,
        }
    }

    pub fn oracle(&self) -> SyntheticOracle {
        SyntheticOracle {
            function: TestFunction::Rff(RffFunction::new(
                6,
                self.length_scale,
                self.signal_variance,
                self.rff_features,
                derive_seed(self.seed, 11),
            )),
            noise_std: self.noise_std,
            seed: derive_seed(self.seed, 12),
        }
    }

    pub fn split(&self) -> Result<SplitDataset, BenchError> {
        let ds = self.oracle().sample_dataset(self.rows, 3f64.sqrt(), derive_seed(self.seed, 13))?;
        Ok(split(&ds, self.train_fraction, derive_seed(self.seed, 14))?)
    }

    pub fn data(&self) -> Result<BenchData, BenchError> {
        BenchData::from_split(&self.split()?)
    }

    /// Depth-sized scenario on this task.
    pub fn spec(&self, repetitions: usize, master_seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            name: "synthetic".into(),
            repetitions,
            ..ScenarioSpec::preset(Target::Depth, master_seed)
        }
    }
}
