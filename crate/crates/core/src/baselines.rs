//! Linear baselines: ridge (closed form), lasso (cyclic coordinate
//! descent) and a seeded k-fold grid search over their penalties.
//!
//! Both fit on centered data; the intercept is recovered from the means.
//! The lasso objective is `1/(2n) |y - Xw|^2 + alpha |w|_1`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::metrics;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("penalty must be non-negative and finite, got {0}")]
    Penalty(f64),
    #[error("normal equations are singular; use a positive ridge penalty")]
    Singular,
    #[error("parameter grid is empty")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Penalty {
    Ridge { alpha: f64 },
    Lasso { alpha: f64, max_iter: usize, tol: f64 },
}

impl Penalty {
    pub fn ridge(alpha: f64) -> Self {
        Penalty::Ridge { alpha }
    }

    /// Lasso with the iteration limit and tolerance used throughout the
    /// benchmark.
    pub fn lasso(alpha: f64) -> Self {
        Penalty::Lasso {
            alpha,
            max_iter: 1000,
            tol: 1e-3,
        }
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            Penalty::Ridge { alpha } | Penalty::Lasso { alpha, .. } => alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: DVector<f64>,
    pub intercept: f64,
    pub penalty: Penalty,
    /// Always true for ridge; for lasso, whether the tolerance was met.
    pub converged: bool,
    pub iterations: usize,
}

impl LinearModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        (x * &self.weights).add_scalar(self.intercept)
    }
}

struct Centered {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_mean: DVector<f64>,
    y_mean: f64,
}

fn center(x: &DMatrix<f64>, y: &DVector<f64>) -> Centered {
    let n = x.nrows() as f64;
    let x_mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
    let y_mean = y.sum() / n;
    let mut xc = x.clone();
    for (j, mut c) in xc.column_iter_mut().enumerate() {
        c.add_scalar_mut(-x_mean[j]);
    }
    Centered {
        x: xc,
        y: y.add_scalar(-y_mean),
        x_mean,
        y_mean,
    }
}

fn check(x: &DMatrix<f64>, alpha: f64) -> Result<(), BaselineError> {
    if x.nrows() < 2 {
        return Err(BaselineError::TooFewRows { needed: 2, got: x.nrows() });
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(BaselineError::Penalty(alpha));
    }
    Ok(())
}

/// Solves `(X^T X + alpha I) w = X^T y` on centered data.
pub fn ridge_fit_xy(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> Result<LinearModel, BaselineError> {
    check(x, alpha)?;
    let c = center(x, y);
    let mut gram = c.x.transpose() * &c.x;
    for i in 0..gram.nrows() {
        gram[(i, i)] += alpha;
    }
    let rhs = c.x.transpose() * &c.y;
    let w = gram.cholesky().ok_or(BaselineError::Singular)?.solve(&rhs);
    Ok(LinearModel {
        intercept: c.y_mean - c.x_mean.dot(&w),
        weights: w,
        penalty: Penalty::ridge(alpha),
        converged: true,
        iterations: 1,
    })
}

pub fn ridge_fit(train: &Dataset, alpha: f64) -> Result<LinearModel, BaselineError> {
    ridge_fit_xy(train.features(), train.targets(), alpha)
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Lasso objective on already centered data.
pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, alpha: f64) -> f64 {
    let r = y - x * w;
    r.norm_squared() / (2.0 * x.nrows() as f64) + alpha * w.lp_norm(1)
}

/// Cyclic coordinate descent; `on_sweep` sees the weights after each sweep.
fn lasso_cd(
    c: &Centered,
    alpha: f64,
    max_iter: usize,
    tol: f64,
    mut on_sweep: impl FnMut(&DVector<f64>),
) -> (DVector<f64>, bool, usize) {
    let n = c.x.nrows() as f64;
    let p = c.x.ncols();
    let col_sq: Vec<f64> = c.x.column_iter().map(|col| col.norm_squared() / n).collect();
    let mut w = DVector::zeros(p);
    let mut r = c.y.clone();
    for sweep in 1..=max_iter {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = c.x.column(j);
            let rho = col.dot(&r) / n + col_sq[j] * w[j];
            let new = soft_threshold(rho, alpha) / col_sq[j];
            let delta: f64 = new - w[j];
            if delta != 0.0 {
                r.axpy(-delta, &col, 1.0);
                w[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        on_sweep(&w);
        if max_change < tol {
            return (w, true, sweep);
        }
    }
    (w, false, max_iter)
}

pub fn lasso_fit_xy(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LinearModel, BaselineError> {
    check(x, alpha)?;
    let c = center(x, y);
    let (w, converged, iterations) = lasso_cd(&c, alpha, max_iter, tol, |_| {});
    Ok(LinearModel {
        intercept: c.y_mean - c.x_mean.dot(&w),
        weights: w,
        penalty: Penalty::Lasso { alpha, max_iter, tol },
        converged,
        iterations,
    })
}

pub fn lasso_fit(train: &Dataset, alpha: f64, max_iter: usize, tol: f64) -> Result<LinearModel, BaselineError> {
    lasso_fit_xy(train.features(), train.targets(), alpha, max_iter, tol)
}

pub fn fit_penalty(x: &DMatrix<f64>, y: &DVector<f64>, penalty: Penalty) -> Result<LinearModel, BaselineError> {
    match penalty {
        Penalty::Ridge { alpha } => ridge_fit_xy(x, y, alpha),
        Penalty::Lasso { alpha, max_iter, tol } => lasso_fit_xy(x, y, alpha, max_iter, tol),
    }
}

/// Seeded assignment of `n` rows to `k` folds; sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub penalty: Penalty,
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub best: Penalty,
    pub cells: Vec<GridCell>,
}

/// K-fold cross-validated grid search; the first cell with the lowest mean
/// validation RMSE wins.
pub fn cv_grid_search(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &[Penalty],
    folds: usize,
    seed: u64,
) -> Result<GridSearch, BaselineError> {
    if grid.is_empty() {
        return Err(BaselineError::EmptyGrid);
    }
    let n = x.nrows();
    if n < folds.max(2) {
        return Err(BaselineError::TooFewRows { needed: folds.max(2), got: n });
    }
    let assign = fold_assignment(n, folds, seed);
    let mut cells = Vec::with_capacity(grid.len());
    for &penalty in grid {
        let mut total = 0.0;
        for f in 0..folds {
            let train: Vec<usize> = (0..n).filter(|&i| assign[i] != f).collect();
            let valid: Vec<usize> = (0..n).filter(|&i| assign[i] == f).collect();
            let model = fit_penalty(&x.select_rows(&train), &y.select_rows(&train), penalty)?;
            let pred = model.predict(&x.select_rows(&valid));
            let actual = y.select_rows(&valid);
            total += metrics::rmse(pred.as_slice(), actual.as_slice()).expect("fold is nonempty");
        }
        cells.push(GridCell {
            penalty,
            mean_rmse: total / folds as f64,
        });
    }
    let best = cells
        .iter()
        .fold(None::<&GridCell>, |b, c| match b {
            Some(b) if b.mean_rmse <= c.mean_rmse => Some(b),
            _ => Some(c),
        })
        .expect("grid is nonempty")
        .penalty;
    Ok(GridSearch { best, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn problem(n: usize, p: usize, seed: u64, noise: f64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let mut r = rng::seeded(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut r));
        let w = DVector::from_fn(p, |_, _| r.random_range(-2.0..2.0));
        let e = DVector::from_fn(n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut r);
            noise * z
        });
        let y = (&x * &w).add_scalar(0.7) + e;
        (x, y, w)
    }

    #[test]
    fn ridge_zero_penalty_is_least_squares() {
        let (x, y, _) = problem(40, 6, 1, 0.1);
        let m = ridge_fit_xy(&x, &y, 0.0).unwrap();
        // least squares with an explicit intercept column via QR
        let xa = DMatrix::from_fn(40, 7, |i, j| if j == 6 { 1.0 } else { x[(i, j)] });
        let qr = xa.clone().qr();
        let beta = qr.r().solve_upper_triangular(&(qr.q().transpose() * &y)).unwrap();
        for j in 0..6 {
            assert!((m.weights[j] - beta[j]).abs() < 1e-8);
        }
        assert!((m.intercept - beta[6]).abs() < 1e-8);
    }

    #[test]
    fn ridge_normal_equations_residual() {
        let (x, y, _) = problem(30, 6, 2, 0.5);
        let alpha = 0.37;
        let m = ridge_fit_xy(&x, &y, alpha).unwrap();
        let c = center(&x, &y);
        let lhs = (c.x.transpose() * &c.x + DMatrix::identity(6, 6) * alpha) * &m.weights;
        let rhs = c.x.transpose() * &c.y;
        assert!((lhs - rhs).amax() < 1e-8);
    }

    #[test]
    fn ridge_large_penalty_predicts_the_mean() {
        let (x, y, _) = problem(25, 6, 3, 0.5);
        let m = ridge_fit_xy(&x, &y, 1e12).unwrap();
        assert!(m.weights.amax() < 1e-8);
        let mean = y.mean();
        assert!(m.predict(&x).iter().all(|p| (p - mean).abs() < 1e-6));
    }

    #[test]
    fn ridge_splits_duplicate_columns_evenly() {
        let (x, y, _) = problem(30, 5, 4, 0.3);
        let xd = DMatrix::from_fn(30, 6, |i, j| if j == 5 { x[(i, 0)] } else { x[(i, j)] });
        let m = ridge_fit_xy(&xd, &y, 0.5).unwrap();
        assert!((m.weights[0] - m.weights[5]).abs() < 1e-8);
    }

    #[test]
    fn lasso_kills_all_weights_above_threshold() {
        let (x, y, _) = problem(30, 6, 5, 0.3);
        let c = center(&x, &y);
        let alpha_max = (c.x.transpose() * &c.y).amax() / 30.0;
        let m = lasso_fit_xy(&x, &y, alpha_max * 1.0001, 1000, 1e-10).unwrap();
        assert!(m.weights.iter().all(|w| *w == 0.0));
        assert!((m.intercept - y.mean()).abs() < 1e-12);
        let m = lasso_fit_xy(&x, &y, alpha_max * 0.9, 1000, 1e-10).unwrap();
        assert!(m.weights.iter().any(|w| *w != 0.0));
    }

    #[test]
    fn lasso_without_penalty_matches_ridge() {
        let (x, y, _) = problem(50, 6, 6, 0.2);
        let l = lasso_fit_xy(&x, &y, 0.0, 100_000, 1e-12).unwrap();
        let r = ridge_fit_xy(&x, &y, 1e-12).unwrap();
        assert!(l.converged);
        assert!((l.weights - r.weights).amax() < 1e-6);
    }

    #[test]
    fn lasso_objective_never_increases() {
        let (x, y, _) = problem(20, 6, 7, 1.0);
        let c = center(&x, &y);
        let mut values = vec![lasso_objective(&c.x, &c.y, &DVector::zeros(6), 0.1)];
        lasso_cd(&c, 0.1, 200, 1e-12, |w| values.push(lasso_objective(&c.x, &c.y, w, 0.1)));
        for w in values.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn lasso_kkt_conditions() {
        let (x, y, _) = problem(40, 6, 8, 1.0);
        let alpha = 0.3;
        let tol = 1e-3;
        let m = lasso_fit_xy(&x, &y, alpha, 1000, tol).unwrap();
        assert!(m.converged);
        let c = center(&x, &y);
        let r = &c.y - &c.x * &m.weights;
        for j in 0..6 {
            let g = c.x.column(j).dot(&r) / 40.0;
            if m.weights[j] == 0.0 {
                assert!(g.abs() <= alpha + tol);
            } else {
                assert!((g - alpha * m.weights[j].signum()).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn lasso_reports_non_convergence() {
        let (x, y, _) = problem(40, 6, 9, 1.0);
        let m = lasso_fit_xy(&x, &y, 0.01, 1, 1e-12).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 1);
    }

    #[test]
    fn folds_partition_rows() {
        for (n, k) in [(10, 5), (13, 5), (836, 5), (5, 5)] {
            let a = fold_assignment(n, k, 3);
            let mut sizes = vec![0; k];
            for f in &a {
                sizes[*f] += 1;
            }
            assert_eq!(sizes.iter().sum::<usize>(), n);
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        assert_eq!(fold_assignment(20, 5, 1), fold_assignment(20, 5, 1));
    }

    #[test]
    fn grid_search_edges() {
        let (x, y, _) = problem(20, 6, 10, 0.5);
        assert_eq!(cv_grid_search(&x, &y, &[], 5, 0), Err(BaselineError::EmptyGrid));
        let g = cv_grid_search(&x, &y, &[Penalty::ridge(0.3)], 5, 0).unwrap();
        assert_eq!(g.best, Penalty::ridge(0.3));
        let tie = cv_grid_search(&x, &y, &[Penalty::ridge(0.3), Penalty::ridge(0.3)], 5, 0).unwrap();
        assert_eq!(tie.cells[0].mean_rmse, tie.cells[1].mean_rmse);
        assert!(cv_grid_search(&x.rows(0, 3).into_owned(), &y.rows(0, 3).into_owned(), &[Penalty::ridge(1.0)], 5, 0).is_err());
    }

    #[test]
    fn grid_search_recovers_the_generating_penalty() {
        // w ~ N(0, tau^2 I), noise N(0, sigma^2): the Bayes-optimal ridge
        // penalty is sigma^2 / tau^2 = 10
        let alphas = [1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4];
        let grid: Vec<Penalty> = alphas.iter().map(|&a| Penalty::ridge(a)).collect();
        let mut hits = 0;
        for seed in 0..20 {
            let mut r = rng::seeded(100 + seed);
            let x = DMatrix::from_fn(60, 6, |_, _| StandardNormal.sample(&mut r));
            let w = DVector::from_fn(6, |_, _| {
                let z: f64 = StandardNormal.sample(&mut r);
                0.1f64.sqrt() * z
            });
            let y = &x * &w + DVector::from_fn(60, |_, _| StandardNormal.sample(&mut r));
            let g = cv_grid_search(&x, &y, &grid, 5, seed).unwrap();
            let pos = alphas.iter().position(|&a| a == g.best.alpha()).unwrap();
            if (2..=4).contains(&pos) {
                hits += 1;
            }
        }
        assert!(hits > 10, "{hits}/20");
    }
}
