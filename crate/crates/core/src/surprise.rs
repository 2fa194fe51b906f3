//! Shannon and Bayesian surprise of a new observation against the current
//! GP posterior.
//!
//! * Shannon surprise is the negative log predictive density of the
//!   observation. It is flagged when the observation leaves the credible
//!   interval `mean +/- k_shannon * std`, where `std` includes observation
//!   noise.
//! * Bayesian surprise is the KL divergence from the posterior before the
//!   observation to the posterior after it, averaged over the marginal
//!   predictive distributions at a fixed reference grid. It is flagged when
//!   it exceeds a threshold calibrated on warm-up observations.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{GpError, GpModel};
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurpriseError {
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveStd(f64),
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("Bayesian surprise needs a calibrated threshold")]
    CalibrationRequired,
    #[error("calibration needs at least {needed} KL samples, got {got}")]
    InsufficientCalibration { needed: usize, got: usize },
    #[error("models before and after the observation must share hyperparameters")]
    HyperparameterMismatch,
    #[error("reference grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Minimum number of warm-up KL values for a calibration.
pub const MIN_CALIBRATION_SAMPLES: usize = 5;

/// Threshold for Bayesian surprise: `mean + k_bayesian * std` of warm-up KLs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mean: f64,
    pub std: f64,
    pub k_bayesian: f64,
    pub samples: usize,
}

impl Calibration {
    pub fn threshold(&self) -> f64 {
        self.mean + self.k_bayesian * self.std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurpriseConfig {
    pub k_shannon: f64,
    pub k_bayesian: f64,
    pub reference_grid_size: usize,
    #[serde(default)]
    pub calibration: Option<Calibration>,
}

impl Default for SurpriseConfig {
    fn default() -> Self {
        SurpriseConfig {
            k_shannon: 1.96,
            k_bayesian: 2.0,
            reference_grid_size: 64,
            calibration: None,
        }
    }
}

impl SurpriseConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.k_shannon > 0.0) || !(self.k_bayesian > 0.0) {
            return Err("surprise multipliers must be positive".into());
        }
        if self.reference_grid_size < 8 {
            return Err("reference grid needs at least 8 points".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurpriseKind {
    Shannon,
    Bayesian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurpriseVerdict {
    pub kind: SurpriseKind,
    /// Negative log-likelihood (Shannon) or mean KL in nats (Bayesian).
    pub value: f64,
    /// Value above which the observation counts as surprising.
    pub threshold: f64,
    pub flagged: bool,
    /// Credible interval `(lower, upper)` for Shannon verdicts.
    #[serde(default)]
    pub interval: Option<(f64, f64)>,
}

/// Shannon surprise of `observed` under `N(mean, std^2)`.
///
/// The observation is flagged when `|observed - mean| > k_shannon * std`
/// (strict). The reported threshold is the negative log-likelihood at the
/// interval boundary, so `flagged` agrees with `value > threshold`.
pub fn shannon_surprise(
    observed: f64,
    mean: f64,
    std: f64,
    cfg: &SurpriseConfig,
) -> Result<SurpriseVerdict, SurpriseError> {
    if !(std > 0.0) {
        return Err(SurpriseError::NonPositiveStd(std));
    }
    let dev = observed - mean;
    let base = 0.5 * (LN_2PI + 2.0 * std.ln());
    let value = base + dev * dev / (2.0 * std * std);
    let half_width = cfg.k_shannon * std;
    Ok(SurpriseVerdict {
        kind: SurpriseKind::Shannon,
        value,
        threshold: base + 0.5 * cfg.k_shannon * cfg.k_shannon,
        flagged: dev.abs() > half_width,
        interval: Some((mean - half_width, mean + half_width)),
    })
}

/// `KL(p || q)` between univariate Gaussians given as `(mean, variance)`.
pub fn gaussian_kl(p: (f64, f64), q: (f64, f64)) -> Result<f64, SurpriseError> {
    let (mp, vp) = p;
    let (mq, vq) = q;
    for v in [vp, vq] {
        if !(v > 0.0) {
            return Err(SurpriseError::NonPositiveVariance(v));
        }
    }
    let kl = 0.5 * (vq / vp).ln() + (vp + (mp - mq) * (mp - mq)) / (2.0 * vq) - 0.5;
    Ok(kl.max(0.0))
}

/// Mean KL from `before` to `after` over the predictive marginals at `grid`.
pub fn mean_grid_kl(
    before: &GpModel,
    after: &GpModel,
    grid: &DMatrix<f64>,
) -> Result<f64, SurpriseError> {
    if grid.nrows() == 0 {
        return Err(SurpriseError::EmptyGrid);
    }
    if before.hyperparams() != after.hyperparams() {
        return Err(SurpriseError::HyperparameterMismatch);
    }
    let noise = before.hyperparams().noise_variance();
    let pb = before.predict(grid)?;
    let pa = after.predict(grid)?;
    let mut total = 0.0;
    for i in 0..grid.nrows() {
        total += gaussian_kl(
            (pb.mean[i], pb.variance[i] + noise),
            (pa.mean[i], pa.variance[i] + noise),
        )?;
    }
    Ok(total / grid.nrows() as f64)
}

/// Bayesian surprise of the update `before -> after`.
pub fn bayesian_surprise(
    before: &GpModel,
    after: &GpModel,
    grid: &DMatrix<f64>,
    cfg: &SurpriseConfig,
) -> Result<SurpriseVerdict, SurpriseError> {
    let cal = cfg.calibration.ok_or(SurpriseError::CalibrationRequired)?;
    let value = mean_grid_kl(before, after, grid)?;
    let threshold = cal.threshold();
    Ok(SurpriseVerdict {
        kind: SurpriseKind::Bayesian,
        value,
        threshold,
        flagged: value > threshold,
        interval: None,
    })
}

/// Calibrates the Bayesian threshold from warm-up KL values (mean and
/// population standard deviation).
pub fn calibrate(warmup_kls: &[f64], k_bayesian: f64) -> Result<Calibration, SurpriseError> {
    if warmup_kls.len() < MIN_CALIBRATION_SAMPLES {
        return Err(SurpriseError::InsufficientCalibration {
            needed: MIN_CALIBRATION_SAMPLES,
            got: warmup_kls.len(),
        });
    }
    let n = warmup_kls.len() as f64;
    let mean = warmup_kls.iter().sum::<f64>() / n;
    let var = warmup_kls.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Calibration {
        mean,
        std: var.sqrt(),
        k_bayesian,
        samples: warmup_kls.len(),
    })
}

/// Leave-one-out KL values of a model's own training points: for each point,
/// the Bayesian surprise of adding it back to the model fitted without it.
pub fn leave_one_out_kls(model: &GpModel, grid: &DMatrix<f64>) -> Result<Vec<f64>, SurpriseError> {
    let n = model.n_train();
    let x = model.inputs();
    let y = model.outputs();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let xi = x.select_rows(&keep);
        let yi = y.select_rows(&keep);
        let without =
            GpModel::with_prior_mean(xi, yi, model.hyperparams(), model.prior_mean())?;
        let point: Vec<f64> = x.row(i).iter().copied().collect();
        let with = without.condition_on(&point, y[i])?;
        out.push(mean_grid_kl(&without, &with, grid)?);
    }
    Ok(out)
}

/// Latin-hypercube sample of `n` points in the box `[lower, upper]`.
pub fn latin_hypercube(n: usize, lower: &[f64], upper: &[f64], seed: u64) -> DMatrix<f64> {
    let d = lower.len();
    let mut r = rng::seeded(seed);
    let mut out = DMatrix::zeros(n, d);
    for j in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut r);
        let width = upper[j] - lower[j];
        for (i, s) in strata.into_iter().enumerate() {
            let u: f64 = r.random();
            out[(i, j)] = lower[j] + width * (s as f64 + u) / n as f64;
        }
    }
    out
}

/// Reference grid spanning the bounding box of `points`.
pub fn reference_grid(points: &DMatrix<f64>, size: usize, seed: u64) -> DMatrix<f64> {
    let d = points.ncols();
    let lower: Vec<f64> = (0..d).map(|j| points.column(j).min()).collect();
    let upper: Vec<f64> = (0..d).map(|j| points.column(j).max()).collect();
    latin_hypercube(size, &lower, &upper, seed)
}
