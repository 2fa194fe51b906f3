//! Mode-specific normalization: each column gets a Gaussian mixture, and a
//! value is encoded as its offset within one mixture component plus a
//! one-hot indicator of that component.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, SeededRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormalizerError {
    #[error("column {column} has {distinct} distinct values; at least {needed} are needed")]
    TooFewDistinct { column: usize, distinct: usize, needed: usize },
    #[error("column {column}: every mixture component degenerated")]
    Degenerate { column: usize },
    #[error("encoded width {got} does not match the normalizer width {expected}")]
    Width { expected: usize, got: usize },
}

const EM_ITERS: usize = 200;
const EM_TOL: f64 = 1e-9;
const MIN_WEIGHT: f64 = 1e-3;

/// One column's mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMixture {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ColumnMixture {
    pub fn components(&self) -> usize {
        self.means.len()
    }

    fn log_component(&self, k: usize, x: f64) -> f64 {
        let z = (x - self.means[k]) / self.stds[k];
        self.weights[k].ln() - self.stds[k].ln() - 0.5 * z * z - 0.918_938_533_204_672_8
    }

    /// Posterior component probabilities of `x`.
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.components()).map(|k| self.log_component(k, x)).collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    fn log_likelihood(&self, xs: &[f64]) -> f64 {
        xs.iter()
            .map(|&x| {
                let logs: Vec<f64> = (0..self.components()).map(|k| self.log_component(k, x)).collect();
                let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
            })
            .sum()
    }
}

/// k-means++ seeding of the component means.
fn seed_means(xs: &[f64], k: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut means = vec![xs[rng.random_range(0..xs.len())]];
    while means.len() < k {
        let d2: Vec<f64> = xs
            .iter()
            .map(|x| means.iter().map(|m| (x - m) * (x - m)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total == 0.0 {
            break;
        }
        let mut u = rng.random_range(0.0..total);
        let mut pick = xs.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if u < *d {
                pick = i;
                break;
            }
            u -= d;
        }
        means.push(xs[pick]);
    }
    means
}

/// EM for a `k`-component mixture; components whose weight vanishes are
/// dropped.
fn fit_em(xs: &[f64], k: usize, std_floor: f64, rng: &mut SeededRng) -> Option<ColumnMixture> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt().max(std_floor);
    let means = seed_means(xs, k, rng);
    let k = means.len();
    let mut mix = ColumnMixture {
        stds: vec![sd / k as f64; k],
        weights: vec![1.0 / k as f64; k],
        means,
    };
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..EM_ITERS {
        let resp: Vec<Vec<f64>> = xs.iter().map(|&x| mix.responsibilities(x)).collect();
        let mut next = ColumnMixture {
            means: Vec::new(),
            stds: Vec::new(),
            weights: Vec::new(),
        };
        for c in 0..mix.components() {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk / n < MIN_WEIGHT {
                tracing::debug!(component = c, "pruning vanishing mixture component");
                continue;
            }
            let mu = resp.iter().zip(xs).map(|(r, x)| r[c] * x).sum::<f64>() / nk;
            let var = resp.iter().zip(xs).map(|(r, x)| r[c] * (x - mu) * (x - mu)).sum::<f64>() / nk;
            next.means.push(mu);
            next.stds.push(var.sqrt().max(std_floor));
            next.weights.push(nk / n);
        }
        if next.components() == 0 {
            return None;
        }
        let total: f64 = next.weights.iter().sum();
        next.weights.iter_mut().for_each(|w| *w /= total);
        mix = next;
        let ll = mix.log_likelihood(xs);
        if (ll - prev).abs() <= EM_TOL * (1.0 + ll.abs()) {
            break;
        }
        prev = ll;
    }
    Some(mix)
}

/// Fits mixtures with 1..=`max_components` components and keeps the one
/// with the lowest BIC.
pub fn fit_column(xs: &[f64], max_components: usize, seed: u64) -> Option<ColumnMixture> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let std_floor = 1e-3 * sd.max(1e-12 * (1.0 + mean.abs()));
    let mut rng = rng::seeded(seed);
    let mut best: Option<(f64, ColumnMixture)> = None;
    for k in 1..=max_components {
        let Some(mix) = fit_em(xs, k, std_floor, &mut rng) else {
            continue;
        };
        let params = (3 * mix.components() - 1) as f64;
        let bic = -2.0 * mix.log_likelihood(xs) + params * n.ln();
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, mix));
        }
    }
    best.map(|(_, m)| m)
}

/// Per-column mixtures and the encode/decode maps they induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeNormalizer {
    pub columns: Vec<ColumnMixture>,
}

impl ModeNormalizer {
    pub fn fit(data: &DMatrix<f64>, components: usize, seed: u64) -> Result<Self, NormalizerError> {
        let mut columns = Vec::with_capacity(data.ncols());
        for (j, col) in data.column_iter().enumerate() {
            let xs: Vec<f64> = col.iter().copied().collect();
            let mut distinct = xs.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() < components {
                return Err(NormalizerError::TooFewDistinct {
                    column: j,
                    distinct: distinct.len(),
                    needed: components,
                });
            }
            let mix = fit_column(&xs, components, rng::derive_seed(seed, j as u64))
                .ok_or(NormalizerError::Degenerate { column: j })?;
            columns.push(mix);
        }
        Ok(ModeNormalizer { columns })
    }

    /// `(offset, components)` of each column inside an encoded row.
    pub fn layout(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.columns
            .iter()
            .map(|c| {
                let here = (off, c.components());
                off += 1 + c.components();
                here
            })
            .collect()
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(|c| 1 + c.components()).sum()
    }

    /// Encodes with an explicit mode per cell.
    pub fn transform_with_modes(&self, data: &DMatrix<f64>, modes: &DMatrix<usize>) -> DMatrix<f64> {
        let layout = self.layout();
        let mut out = DMatrix::zeros(data.nrows(), self.width());
        for i in 0..data.nrows() {
            for (j, mix) in self.columns.iter().enumerate() {
                let (off, _) = layout[j];
                let k = modes[(i, j)];
                out[(i, off)] = (data[(i, j)] - mix.means[k]) / (4.0 * mix.stds[k]);
                out[(i, off + 1 + k)] = 1.0;
            }
        }
        out
    }

    /// Encodes, drawing each cell's mode from its posterior.
    pub fn transform(&self, data: &DMatrix<f64>, rng: &mut SeededRng) -> DMatrix<f64> {
        let modes = DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| {
            let resp = self.columns[j].responsibilities(data[(i, j)]);
            let mut u: f64 = rng.random();
            let mut pick = resp.len() - 1;
            for (k, p) in resp.iter().enumerate() {
                if u < *p {
                    pick = k;
                    break;
                }
                u -= p;
            }
            pick
        });
        self.transform_with_modes(data, &modes)
    }

    /// Decodes rows; the mode of each column is the argmax of its indicator
    /// block.
    pub fn inverse(&self, encoded: &DMatrix<f64>) -> Result<DMatrix<f64>, NormalizerError> {
        if encoded.ncols() != self.width() {
            return Err(NormalizerError::Width {
                expected: self.width(),
                got: encoded.ncols(),
            });
        }
        let layout = self.layout();
        Ok(DMatrix::from_fn(encoded.nrows(), self.columns.len(), |i, j| {
            let (off, kk) = layout[j];
            let mut k = 0;
            for c in 1..kk {
                if encoded[(i, off + 1 + c)] > encoded[(i, off + 1 + k)] {
                    k = c;
                }
            }
            let mix = &self.columns[j];
            4.0 * mix.stds[k] * encoded[(i, off)] + mix.means[k]
        }))
    }
}
