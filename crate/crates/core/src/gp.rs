//! Gaussian-process regression with a squared-exponential kernel.
//!
//! The covariance between two inputs is
//!
//! ```text
//! k(xi, xj) = signal_variance * exp(-|xi - xj|^2 / (2 * length_scale^2))
//! ```
//!
//! and observations carry independent Gaussian noise, so the training
//! covariance is `K_y = K + noise_variance * I`. Hyperparameters are found by
//! maximizing the log marginal likelihood with multi-start projected gradient
//! ascent in log space. All solves go through the Cholesky factor of `K_y`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("covariance matrix is not positive definite even with jitter {jitter:e}")]
    Conditioning { jitter: f64 },
    #[error("need at least {needed} training points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),
}

/// Jitter ladder added to the diagonal before giving up on a factorization.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Kernel and noise hyperparameters, stored as natural logarithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub log_length_scale: f64,
    pub log_signal_variance: f64,
    pub log_noise_variance: f64,
}

impl Hyperparams {
    pub fn new(length_scale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self, GpError> {
        for (name, v) in [
            ("length_scale", length_scale),
            ("signal_variance", signal_variance),
            ("noise_variance", noise_variance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GpError::Hyperparameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Hyperparams {
            log_length_scale: length_scale.ln(),
            log_signal_variance: signal_variance.ln(),
            log_noise_variance: noise_variance.ln(),
        })
    }

    pub fn from_log(theta: [f64; 3]) -> Self {
        Hyperparams {
            log_length_scale: theta[0],
            log_signal_variance: theta[1],
            log_noise_variance: theta[2],
        }
    }

    pub fn to_log(self) -> [f64; 3] {
        [self.log_length_scale, self.log_signal_variance, self.log_noise_variance]
    }

    pub fn length_scale(&self) -> f64 {
        self.log_length_scale.exp()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }
}

/// Box constraints on the log hyperparameters during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogBounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl Default for LogBounds {
    fn default() -> Self {
        LogBounds {
            lower: [1e-2f64.ln(), 1e-4f64.ln(), 1e-6f64.ln()],
            upper: [1e2f64.ln(), 1e2f64.ln(), 1e1f64.ln()],
        }
    }
}

impl LogBounds {
    fn clamp(&self, theta: [f64; 3]) -> [f64; 3] {
        let mut out = theta;
        for i in 0..3 {
            out[i] = theta[i].clamp(self.lower[i], self.upper[i]);
        }
        out
    }
}

/// Settings for maximum-likelihood hyperparameter fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_starts: usize,
    pub max_iter: usize,
    /// Relative LML improvement below which an ascent run stops.
    pub tol: f64,
    pub bounds: LogBounds,
    pub seed: u64,
    /// Replaces the heuristic first start, e.g. the previous fit's optimum.
    #[serde(default)]
    pub initial: Option<Hyperparams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_starts: 8,
            max_iter: 60,
            tol: 1e-7,
            bounds: LogBounds::default(),
            seed: 0,
            initial: None,
        }
    }
}

fn sq_dist(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Squared-exponential covariance between two points.
pub fn kernel_se(xi: &[f64], xj: &[f64], hyper: &Hyperparams) -> Result<f64, GpError> {
    if xi.len() != xj.len() {
        return Err(GpError::Shape(format!(
            "points have dimensions {} and {}",
            xi.len(),
            xj.len()
        )));
    }
    let d2 = sq_dist(xi.iter().copied(), xj.iter().copied());
    let l = hyper.length_scale();
    Ok(hyper.signal_variance() * (-d2 / (2.0 * l * l)).exp())
}

/// Pairwise squared distances between the rows of `x`.
fn pairwise_sq_dists(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = sq_dist(x.row(i).iter().copied(), x.row(j).iter().copied());
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Cross covariance `k(X, Q)` (n x m).
fn cross_cov(x: &DMatrix<f64>, q: &DMatrix<f64>, hyper: &Hyperparams) -> DMatrix<f64> {
    let s2 = hyper.signal_variance();
    let inv2l2 = 1.0 / (2.0 * hyper.length_scale().powi(2));
    DMatrix::from_fn(x.nrows(), q.nrows(), |i, j| {
        s2 * (-sq_dist(x.row(i).iter().copied(), q.row(j).iter().copied()) * inv2l2).exp()
    })
}

fn kernel_from_dists(d2: &DMatrix<f64>, hyper: &Hyperparams) -> DMatrix<f64> {
    let s2 = hyper.signal_variance();
    let inv2l2 = 1.0 / (2.0 * hyper.length_scale().powi(2));
    d2.map(|v| s2 * (-v * inv2l2).exp())
}

/// Factorizes `k + (noise + jitter) I`, walking the jitter ladder.
fn factorize(k: &DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    for &jitter in JITTER_LADDER.iter() {
        let mut ky = k.clone();
        for i in 0..ky.nrows() {
            ky[(i, i)] += noise + jitter;
        }
        if let Some(ch) = Cholesky::new(ky) {
            return Ok((ch, jitter));
        }
    }
    Err(GpError::Conditioning {
        jitter: *JITTER_LADDER.last().unwrap(),
    })
}

fn log_det_from_chol(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Posterior marginals (and optionally the joint covariance) at query points.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: DVector<f64>,
    /// Latent-function variance, clamped at zero.
    pub variance: DVector<f64>,
    pub covariance: Option<DMatrix<f64>>,
}

impl Posterior {
    pub fn std_dev(&self) -> DVector<f64> {
        self.variance.map(f64::sqrt)
    }
}

/// A fitted (or fixed-hyperparameter) GP conditioned on training data.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: DMatrix<f64>,
    y: DVector<f64>,
    hyper: Hyperparams,
    prior_mean: f64,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Serializable summary of a model for resume and display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub hyperparams: Hyperparams,
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub prior_mean: f64,
    pub n_train: usize,
    pub jitter: f64,
    pub hash: String,
}

impl GpModel {
    /// Builds the model for fixed hyperparameters and prior mean.
    pub fn with_prior_mean(
        x: DMatrix<f64>,
        y: DVector<f64>,
        hyper: Hyperparams,
        prior_mean: f64,
    ) -> Result<Self, GpError> {
        if x.nrows() != y.len() {
            return Err(GpError::Shape(format!("{} inputs but {} outputs", x.nrows(), y.len())));
        }
        if x.nrows() == 0 {
            return Err(GpError::InsufficientData { needed: 1, got: 0 });
        }
        let k = kernel_from_dists(&pairwise_sq_dists(&x), &hyper);
        let (ch, jitter) = factorize(&k, hyper.noise_variance())?;
        let resid = y.add_scalar(-prior_mean);
        let alpha = ch.solve(&resid);
        Ok(GpModel {
            x,
            y,
            hyper,
            prior_mean,
            chol: ch.unpack(),
            alpha,
            jitter,
        })
    }

    /// Builds the model with the prior mean set to the mean training output.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, hyper: Hyperparams) -> Result<Self, GpError> {
        let m = if y.is_empty() { 0.0 } else { y.mean() };
        Self::with_prior_mean(x, y, hyper, m)
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.hyper
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn n_train(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Log marginal likelihood and its gradient with respect to
    /// `(log l, log signal variance, log noise variance)`.
    pub fn log_marginal_likelihood(&self) -> (f64, [f64; 3]) {
        let d2 = pairwise_sq_dists(&self.x);
        let resid = self.y.add_scalar(-self.prior_mean);
        lml_with_gradient(&d2, &resid, &self.hyper)
            .expect("model factorization already succeeded")
    }

    /// Posterior marginals at the rows of `query`.
    pub fn predict(&self, query: &DMatrix<f64>) -> Result<Posterior, GpError> {
        self.predict_impl(query, false)
    }

    /// Posterior with the full joint covariance.
    pub fn predict_full(&self, query: &DMatrix<f64>) -> Result<Posterior, GpError> {
        self.predict_impl(query, true)
    }

    fn predict_impl(&self, query: &DMatrix<f64>, full: bool) -> Result<Posterior, GpError> {
        if query.ncols() != self.dim() {
            return Err(GpError::Shape(format!(
                "query dimension {} differs from training dimension {}",
                query.ncols(),
                self.dim()
            )));
        }
        let ks = cross_cov(&self.x, query, &self.hyper);
        let mean = (ks.transpose() * &self.alpha).add_scalar(self.prior_mean);
        let v = self
            .chol
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        let s2 = self.hyper.signal_variance();
        let variance = DVector::from_iterator(
            query.nrows(),
            v.column_iter().map(|c| (s2 - c.norm_squared()).max(0.0)),
        );
        let covariance = full.then(|| {
            let kss = cross_cov(query, query, &self.hyper);
            kss - v.transpose() * &v
        });
        Ok(Posterior {
            mean,
            variance,
            covariance,
        })
    }

    /// Posterior mean and latent variance at a single point.
    pub fn predict_point(&self, point: &[f64]) -> Result<(f64, f64), GpError> {
        let q = DMatrix::from_row_slice(1, point.len(), point);
        let p = self.predict(&q)?;
        Ok((p.mean[0], p.variance[0]))
    }

    /// Adds one observation with unchanged hyperparameters and prior mean by
    /// extending the Cholesky factor; falls back to a jittered rebuild.
    pub fn condition_on(&self, point: &[f64], y: f64) -> Result<GpModel, GpError> {
        if point.len() != self.dim() {
            return Err(GpError::Shape(format!(
                "point dimension {} differs from training dimension {}",
                point.len(),
                self.dim()
            )));
        }
        let n = self.n_train();
        let mut x = self.x.clone().insert_row(n, 0.0);
        x.row_mut(n).copy_from_slice(point);
        let ys = self.y.clone().push(y);

        let q = DMatrix::from_row_slice(1, point.len(), point);
        let k = cross_cov(&self.x, &q, &self.hyper);
        let l_row = self
            .chol
            .solve_lower_triangular(&k)
            .expect("cholesky factor has a positive diagonal");
        let kss = self.hyper.signal_variance() + self.hyper.noise_variance() + self.jitter;
        let d2 = kss - l_row.norm_squared();
        if !(d2 > 1e-14 * kss) {
            return GpModel::with_prior_mean(x, ys, self.hyper, self.prior_mean);
        }
        let mut chol = self.chol.clone().insert_row(n, 0.0).insert_column(n, 0.0);
        for j in 0..n {
            chol[(n, j)] = l_row[(j, 0)];
        }
        chol[(n, n)] = d2.sqrt();
        let resid = ys.add_scalar(-self.prior_mean);
        let alpha = solve_with_factor(&chol, &resid);
        Ok(GpModel {
            x,
            y: ys,
            hyper: self.hyper,
            prior_mean: self.prior_mean,
            chol,
            alpha,
            jitter: self.jitter,
        })
    }

    /// Digest of everything that determines predictions.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.hyper.to_log() {
            h.update(v.to_le_bytes());
        }
        h.update(self.prior_mean.to_le_bytes());
        h.update((self.x.nrows() as u64).to_le_bytes());
        h.update((self.x.ncols() as u64).to_le_bytes());
        for v in self.x.iter().chain(self.y.iter()) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn snapshot(&self) -> GpSnapshot {
        GpSnapshot {
            hyperparams: self.hyper,
            length_scale: self.hyper.length_scale(),
            signal_variance: self.hyper.signal_variance(),
            noise_variance: self.hyper.noise_variance(),
            prior_mean: self.prior_mean,
            n_train: self.n_train(),
            jitter: self.jitter,
            hash: self.hash(),
        }
    }
}

/// Posterior marginals at a fixed query set, updated in `O(n m)` when the
/// model grows by one observation instead of `O(n^2 m)` from scratch.
#[derive(Debug, Clone)]
pub struct PredictionCache {
    query: DMatrix<f64>,
    /// `L^-1 k(X, Q)`.
    v: DMatrix<f64>,
    /// `L^-1 (y - prior_mean)`.
    beta: DVector<f64>,
    sumsq: DVector<f64>,
    hyper: Hyperparams,
    prior_mean: f64,
    jitter: f64,
    n: usize,
}

impl PredictionCache {
    pub fn new(model: &GpModel, query: DMatrix<f64>) -> Result<Self, GpError> {
        if query.ncols() != model.dim() {
            return Err(GpError::Shape(format!(
                "query dimension {} differs from training dimension {}",
                query.ncols(),
                model.dim()
            )));
        }
        let ks = cross_cov(&model.x, &query, &model.hyper);
        let v = model
            .chol
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        let beta = model
            .chol
            .solve_lower_triangular(&model.y.add_scalar(-model.prior_mean))
            .expect("cholesky factor has a positive diagonal");
        let sumsq = DVector::from_iterator(v.ncols(), v.column_iter().map(|c| c.norm_squared()));
        Ok(PredictionCache {
            query,
            v,
            beta,
            sumsq,
            hyper: model.hyper,
            prior_mean: model.prior_mean,
            jitter: model.jitter,
            n: model.n_train(),
        })
    }

    /// Brings the cache up to date with `model`: one appended row is folded
    /// in incrementally, anything else triggers a rebuild.
    pub fn sync(&mut self, model: &GpModel) -> Result<(), GpError> {
        let same_params = model.hyper == self.hyper
            && model.prior_mean == self.prior_mean
            && model.jitter == self.jitter;
        if same_params && model.n_train() == self.n {
            return Ok(());
        }
        if !same_params || model.n_train() != self.n + 1 {
            *self = PredictionCache::new(model, self.query.clone())?;
            return Ok(());
        }
        let n = self.n;
        let l = &model.chol;
        let d = l[(n, n)];
        let xn = model.x.rows(n, 1).into_owned();
        let k_new = cross_cov(&xn, &self.query, &model.hyper);
        let l_row = l.view((n, 0), (1, n));
        let v_new = (k_new - l_row * &self.v) / d;
        let mut b = model.y[n] - model.prior_mean;
        for i in 0..n {
            b -= l[(n, i)] * self.beta[i];
        }
        self.v = std::mem::take(&mut self.v).insert_row(n, 0.0);
        self.v.row_mut(n).copy_from(&v_new);
        self.beta = std::mem::take(&mut self.beta).push(b / d);
        for (s, v) in self.sumsq.iter_mut().zip(v_new.iter()) {
            *s += v * v;
        }
        self.n += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.query.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.query.nrows() == 0
    }

    /// Posterior mean and latent variance at query row `j`.
    pub fn mean_var(&self, j: usize) -> (f64, f64) {
        let mean = self.prior_mean + self.v.column(j).dot(&self.beta);
        let var = (self.hyper.signal_variance() - self.sumsq[j]).max(0.0);
        (mean, var)
    }
}

fn solve_with_factor(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let z = l.solve_lower_triangular(b).expect("positive diagonal");
    l.transpose()
        .solve_upper_triangular(&z)
        .expect("positive diagonal")
}

/// LML value only (one factorization).
fn lml_value(d2: &DMatrix<f64>, resid: &DVector<f64>, hyper: &Hyperparams) -> Option<f64> {
    let k = kernel_from_dists(d2, hyper);
    let (ch, _) = factorize(&k, hyper.noise_variance()).ok()?;
    let alpha = ch.solve(resid);
    let n = resid.len() as f64;
    let v = -0.5 * resid.dot(&alpha) - 0.5 * log_det_from_chol(ch.l_dirty()) - 0.5 * n * LN_2PI;
    v.is_finite().then_some(v)
}

fn lml_with_gradient(
    d2: &DMatrix<f64>,
    resid: &DVector<f64>,
    hyper: &Hyperparams,
) -> Result<(f64, [f64; 3]), GpError> {
    let kf = kernel_from_dists(d2, hyper);
    let (ch, _) = factorize(&kf, hyper.noise_variance())?;
    let alpha = ch.solve(resid);
    let n = resid.len();
    let value = -0.5 * resid.dot(&alpha)
        - 0.5 * log_det_from_chol(ch.l_dirty())
        - 0.5 * n as f64 * LN_2PI;
    let kinv = ch.inverse();
    let inv_l2 = 1.0 / hyper.length_scale().powi(2);
    let noise = hyper.noise_variance();
    // dLML/dtheta = 0.5 * tr((alpha alpha^T - K^-1) dK/dtheta)
    let (mut g_len, mut g_sig, mut g_noise) = (0.0, 0.0, 0.0);
    for j in 0..n {
        for i in 0..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let k = kf[(i, j)];
            g_sig += w * k;
            g_len += w * k * d2[(i, j)] * inv_l2;
        }
        g_noise += (alpha[j] * alpha[j] - kinv[(j, j)]) * noise;
    }
    Ok((value, [0.5 * g_len, 0.5 * g_sig, 0.5 * g_noise]))
}

/// Log marginal likelihood and gradient for arbitrary data and
/// hyperparameters, with the given constant prior mean.
pub fn log_marginal_likelihood(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    prior_mean: f64,
    hyper: &Hyperparams,
) -> Result<(f64, [f64; 3]), GpError> {
    if x.nrows() != y.len() {
        return Err(GpError::Shape(format!("{} inputs but {} outputs", x.nrows(), y.len())));
    }
    lml_with_gradient(&pairwise_sq_dists(x), &y.add_scalar(-prior_mean), hyper)
}

/// Result of one ascent run.
#[derive(Debug, Clone, Copy)]
struct Ascent {
    theta: [f64; 3],
    value: f64,
    start_value: f64,
}

fn ascend(
    d2: &DMatrix<f64>,
    resid: &DVector<f64>,
    start: [f64; 3],
    cfg: &FitConfig,
) -> Option<Ascent> {
    let bounds = cfg.bounds;
    let mut theta = bounds.clamp(start);
    let (mut f, mut g) = lml_with_gradient(d2, resid, &Hyperparams::from_log(theta)).ok()?;
    let start_value = f;
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut step = if gmax > 1.0 { 1.0 / gmax } else { 1.0 };

    for _ in 0..cfg.max_iter {
        let mut accepted = None;
        for _ in 0..40 {
            let cand = bounds.clamp([
                theta[0] + step * g[0],
                theta[1] + step * g[1],
                theta[2] + step * g[2],
            ]);
            let delta = [cand[0] - theta[0], cand[1] - theta[1], cand[2] - theta[2]];
            let moved = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if moved < 1e-10 {
                break;
            }
            let slope = g[0] * delta[0] + g[1] * delta[1] + g[2] * delta[2];
            match lml_value(d2, resid, &Hyperparams::from_log(cand)) {
                Some(fc) if fc >= f + 1e-4 * slope => {
                    accepted = Some((cand, fc));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((cand, fc)) = accepted else { break };
        let gain = fc - f;
        let Ok((fv, gv)) = lml_with_gradient(d2, resid, &Hyperparams::from_log(cand)) else {
            break;
        };
        theta = cand;
        f = fv;
        g = gv;
        step *= 2.0;
        if gain <= cfg.tol * (1.0 + f.abs()) {
            break;
        }
    }
    Some(Ascent {
        theta,
        value: f,
        start_value,
    })
}

/// Start points: the supplied or heuristic initial guess, then uniform draws
/// inside the log-space box.
fn start_points(y: &DVector<f64>, cfg: &FitConfig) -> Vec<[f64; 3]> {
    let var = if y.len() > 1 { y.variance().max(1e-3) } else { 1.0 };
    let first = cfg
        .initial
        .map(Hyperparams::to_log)
        .unwrap_or([0.0, var.ln(), (0.1 * var).ln()]);
    let mut r = rng::derived(cfg.seed, rng::stream::FIT);
    let mut starts = vec![cfg.bounds.clamp(first)];
    while starts.len() < cfg.n_starts.max(1) {
        let mut t = [0.0; 3];
        for (i, v) in t.iter_mut().enumerate() {
            *v = r.random_range(cfg.bounds.lower[i]..=cfg.bounds.upper[i]);
        }
        starts.push(t);
    }
    starts
}

/// Fits hyperparameters by maximizing the log marginal likelihood and returns
/// the conditioned model. The prior mean is the mean training output.
pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &FitConfig) -> Result<GpModel, GpError> {
    let (model, _) = fit_with_trace(x, y, cfg)?;
    Ok(model)
}

/// Per-start record of a fit, for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub start: [f64; 3],
    pub start_lml: Option<f64>,
    pub final_lml: Option<f64>,
}

pub fn fit_with_trace(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &FitConfig,
) -> Result<(GpModel, Vec<StartTrace>), GpError> {
    if x.nrows() != y.len() {
        return Err(GpError::Shape(format!("{} inputs but {} outputs", x.nrows(), y.len())));
    }
    if y.len() < 2 {
        return Err(GpError::InsufficientData {
            needed: 2,
            got: y.len(),
        });
    }
    let prior_mean = y.mean();
    let resid = y.add_scalar(-prior_mean);
    let d2 = pairwise_sq_dists(x);

    let mut best: Option<Ascent> = None;
    let mut trace = Vec::new();
    for start in start_points(y, cfg) {
        let run = ascend(&d2, &resid, start, cfg);
        trace.push(StartTrace {
            start,
            start_lml: run.map(|r| r.start_value),
            final_lml: run.map(|r| r.value),
        });
        if let Some(r) = run {
            // strict comparison keeps the earliest start on ties
            if best.is_none_or(|b| r.value > b.value) {
                best = Some(r);
            }
        }
    }
    let best = best.ok_or(GpError::Conditioning {
        jitter: *JITTER_LADDER.last().unwrap(),
    })?;
    let model = GpModel::with_prior_mean(
        x.clone(),
        y.clone(),
        Hyperparams::from_log(best.theta),
        prior_mean,
    )?;
    Ok((model, trace))
}
