//! Minimal dense layers with hand-written backward passes. Batches are
//! matrices with one example per row.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;

/// Fully connected layer `y = x W^T + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    #[serde(skip)]
    vw: Option<DMatrix<f64>>,
    #[serde(skip)]
    vb: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct LinearGrad {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Linear {
    /// Uniform initialization in `+/- 1/sqrt(fan_in)`.
    pub fn new(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            w: DMatrix::from_fn(output, input, |_, _| rng.random_range(-bound..bound)),
            b: DVector::from_fn(output, |_, _| rng.random_range(-bound..bound)),
            vw: None,
            vb: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.w.transpose();
        for mut row in y.row_iter_mut() {
            row += self.b.transpose();
        }
        y
    }

    /// Returns the gradient wrt the input and the parameter gradients.
    pub fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>) -> (DMatrix<f64>, LinearGrad) {
        let dx = dy * &self.w;
        let gw = dy.transpose() * x;
        let gb = DVector::from_iterator(dy.ncols(), dy.column_iter().map(|c| c.sum()));
        (dx, LinearGrad { w: gw, b: gb })
    }

    /// Stochastic gradient descent with momentum.
    pub fn step(&mut self, g: &LinearGrad, lr: f64, momentum: f64) {
        let vw = self.vw.get_or_insert_with(|| DMatrix::zeros(g.w.nrows(), g.w.ncols()));
        *vw *= momentum;
        *vw -= &g.w * lr;
        self.w += &*vw;
        let vb = self.vb.get_or_insert_with(|| DVector::zeros(g.b.len()));
        *vb *= momentum;
        *vb -= &g.b * lr;
        self.b += &*vb;
    }

    /// Parameters flattened as weights (row-major) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.w.transpose().iter().copied().collect();
        out.extend(self.b.iter());
        out
    }

    pub fn param_mut(&mut self, k: usize) -> &mut f64 {
        let nw = self.w.len();
        if k < nw {
            let cols = self.w.ncols();
            &mut self.w[(k / cols, k % cols)]
        } else {
            &mut self.b[k - nw]
        }
    }
}

impl LinearGrad {
    pub fn get(&self, k: usize) -> f64 {
        let nw = self.w.len();
        if k < nw {
            let cols = self.w.ncols();
            self.w[(k / cols, k % cols)]
        } else {
            self.b[k - nw]
        }
    }
}

pub fn relu(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &DMatrix<f64>, dy: &DMatrix<f64>) -> DMatrix<f64> {
    dy.zip_map(x, |g, v| if v > 0.0 { g } else { 0.0 })
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

pub fn leaky_relu_backward(x: &DMatrix<f64>, dy: &DMatrix<f64>) -> DMatrix<f64> {
    dy.zip_map(x, |g, v| if v > 0.0 { g } else { LEAKY_SLOPE * g })
}

/// Numerically stable logistic function.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^v)` without overflow.
pub fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// Horizontal concatenation `[a | b]`.
pub fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Groups each run of `pac` consecutive rows into one wide row.
pub fn pack(x: &DMatrix<f64>, pac: usize) -> DMatrix<f64> {
    assert_eq!(x.nrows() % pac, 0, "batch must be a multiple of pac");
    let w = x.ncols();
    DMatrix::from_fn(x.nrows() / pac, w * pac, |i, j| x[(i * pac + j / w, j % w)])
}

/// Inverse of [`pack`].
pub fn unpack(x: &DMatrix<f64>, pac: usize) -> DMatrix<f64> {
    let w = x.ncols() / pac;
    DMatrix::from_fn(x.nrows() * pac, w, |i, j| x[(i / pac, (i % pac) * w + j)])
}
