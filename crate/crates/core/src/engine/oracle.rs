//! Sources of observations for a campaign.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetError, FeatureSchema, FEATURE_COUNT};
use crate::rng::{self, derive_seed};

/// Random-Fourier-feature approximation of a draw from a zero-mean GP with a
/// squared-exponential kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffFunction {
    freqs: DMatrix<f64>,
    phases: Vec<f64>,
    weights: Vec<f64>,
    amplitude: f64,
}

impl RffFunction {
    pub fn new(dim: usize, length_scale: f64, signal_variance: f64, features: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let freqs = DMatrix::from_fn(features, dim, |_, _| {
            let z: f64 = StandardNormal.sample(&mut r);
            z / length_scale
        });
        let phases = (0..features)
            .map(|_| r.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let weights = (0..features).map(|_| StandardNormal.sample(&mut r)).collect();
        RffFunction {
            freqs,
            phases,
            weights,
            amplitude: (2.0 * signal_variance / features as f64).sqrt(),
        }
    }

    pub fn dim(&self) -> usize {
        self.freqs.ncols()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (k, row) in self.freqs.row_iter().enumerate() {
            let arg: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.phases[k];
            total += self.weights[k] * arg.cos();
        }
        self.amplitude * total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Rff(RffFunction),
    /// `-|x - center|^2`
    Quadratic { center: Vec<f64> },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Rff(f) => f.eval(x),
            TestFunction::Quadratic { center } => {
                -center.iter().zip(x).map(|(c, v)| (v - c) * (v - c)).sum::<f64>()
            }
        }
    }
}

/// A test function plus Gaussian noise that is a deterministic function of
/// the point and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracle {
    pub function: TestFunction,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticOracle {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut h = derive_seed(self.seed, rng::stream::NOISE);
        for v in x {
            h = derive_seed(h, v.to_bits());
        }
        let z: f64 = StandardNormal.sample(&mut rng::seeded(h));
        self.function.eval(x) + self.noise_std * z
    }

    /// Draws `n` six-feature points uniformly in `[-half_width, half_width]`
    /// per axis and evaluates the oracle at each.
    pub fn sample_dataset(&self, n: usize, half_width: f64, seed: u64) -> Result<Dataset, DatasetError> {
        let mut r = rng::seeded(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..FEATURE_COUNT).map(|_| r.random_range(-half_width..half_width)).collect())
            .collect();
        let targets: Vec<f64> = rows.iter().map(|x| self.evaluate(x)).collect();
        Dataset::from_rows(FeatureSchema::synthetic(), &rows, &targets)
    }
}

/// Where a campaign's measurements come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    /// Recorded target per candidate row.
    Pool { targets: DVector<f64> },
    /// Evaluates a test function at the candidate's coordinates.
    Synthetic(SyntheticOracle),
    /// Measurements arrive from outside through `campaign_step`.
    Deferred,
}

impl Oracle {
    pub fn pool(targets: DVector<f64>) -> Self {
        Oracle::Pool { targets }
    }

    pub fn observe(&self, candidate_index: usize, point: &[f64]) -> Option<f64> {
        match self {
            Oracle::Pool { targets } => targets.get(candidate_index).copied(),
            Oracle::Synthetic(s) => Some(s.evaluate(point)),
            Oracle::Deferred => None,
        }
    }
}
