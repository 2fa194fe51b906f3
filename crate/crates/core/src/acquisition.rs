//! Candidate scoring: expected improvement for the EI baseline loop and the
//! maximin distance criterion used by the surprise-guided exploration phase.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::CandidatePool;
use crate::gp::{GpError, GpModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcquisitionError {
    #[error("candidate pool is exhausted")]
    ExhaustedPool,
    #[error("standard deviation must be non-negative, got {0}")]
    NegativeStd(f64),
    #[error("maximin needs at least one used design point")]
    NoUsedPoints,
    #[error(transparent)]
    Gp(#[from] GpError),
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function via the complementary error
/// function, accurate in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Ei,
    Maximin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    /// Row index into the candidate matrix.
    pub index: usize,
    pub score: f64,
    pub kind: ScoreKind,
}

/// Expected improvement of a Gaussian prediction over `best` (maximization).
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> Result<f64, AcquisitionError> {
    if std < 0.0 || std.is_nan() {
        return Err(AcquisitionError::NegativeStd(std));
    }
    let delta = mean - best;
    if std == 0.0 {
        return Ok(delta.max(0.0));
    }
    let z = delta / std;
    let ei = delta * normal_cdf(z) + std * normal_pdf(z);
    Ok(ei.max(0.0))
}

/// Index-ordered argmax: the first maximal entry wins.
fn argmax(scores: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

/// Pool candidate with the highest expected improvement under `model`.
pub fn argmax_ei(
    model: &GpModel,
    pool: &CandidatePool,
    candidates: &DMatrix<f64>,
    best: f64,
) -> Result<CandidateScore, AcquisitionError> {
    if pool.is_empty() {
        return Err(AcquisitionError::ExhaustedPool);
    }
    let query = candidates.select_rows(pool.indices());
    let post = model.predict(&query)?;
    let scores = pool
        .indices()
        .iter()
        .enumerate()
        .map(|(k, &idx)| {
            let s = expected_improvement(post.mean[k], post.variance[k].sqrt(), best)
                .expect("posterior variance is non-negative");
            (idx, s)
        });
    let (index, score) = argmax(scores).expect("pool is nonempty");
    Ok(CandidateScore {
        index,
        score,
        kind: ScoreKind::Ei,
    })
}

/// Smallest Euclidean distance from candidate row `row` to any used point.
pub fn min_distance(candidates: &DMatrix<f64>, row: usize, used: &DMatrix<f64>) -> f64 {
    let c = candidates.row(row);
    used.row_iter()
        .map(|u| c.iter().zip(u.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Pool candidate maximizing the minimum distance to the used designs.
pub fn maximin_next(
    pool: &CandidatePool,
    used: &DMatrix<f64>,
    candidates: &DMatrix<f64>,
) -> Result<CandidateScore, AcquisitionError> {
    if pool.is_empty() {
        return Err(AcquisitionError::ExhaustedPool);
    }
    if used.nrows() == 0 {
        return Err(AcquisitionError::NoUsedPoints);
    }
    let scores = pool
        .indices()
        .iter()
        .map(|&idx| (idx, min_distance(candidates, idx, used)));
    let (index, score) = argmax(scores).expect("pool is nonempty");
    Ok(CandidateScore {
        index,
        score,
        kind: ScoreKind::Maximin,
    })
}

/// Unused pool candidate nearest to `locus`, optionally within `radius`.
/// Ties go to the lowest index.
pub fn nearest_unused(
    pool: &CandidatePool,
    candidates: &DMatrix<f64>,
    locus: &[f64],
    radius: Option<f64>,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &idx in pool.indices() {
        let d2: f64 = candidates
            .row(idx)
            .iter()
            .zip(locus)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if best.is_none_or(|(_, b)| d2 < b) {
            best = Some((idx, d2));
        }
    }
    best.map(|(i, d2)| (i, d2.sqrt()))
        .filter(|(_, d)| radius.is_none_or(|r| *d <= r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Hyperparams;
    use crate::rng;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn cdf_matches_high_precision_reference() {
        // mpmath ncdf at 40 digits
        let reference = [
            (-8.0, 6.220_960_574_271_784e-16),
            (-6.5, 4.016_000_583_859_118e-11),
            (-3.0, 0.001_349_898_031_630_094_5),
            (-1.5, 0.066_807_201_268_858_07),
            (-0.3, 0.382_088_577_811_047_37),
            (0.0, 0.5),
            (0.7, 0.758_036_347_776_926_9),
            (2.0, 0.977_249_868_051_820_8),
            (4.2, 0.999_986_654_250_984_1),
            (8.0, 0.999_999_999_999_999_4),
        ];
        for (z, p) in reference {
            assert!((normal_cdf(z) - p).abs() < 1e-12, "z = {z}");
        }
    }

    #[test]
    fn ei_closed_form() {
        let ei = expected_improvement(1.0, 1.0, 0.0).unwrap();
        assert!((ei - 1.083_315_470_587_686_3).abs() < 1e-10);
        assert_eq!(expected_improvement(-0.5, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(expected_improvement(0.0, 0.0, 0.0).unwrap(), 0.0);
        assert!((expected_improvement(0.7, 0.0, 0.2).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            expected_improvement(0.0, -1.0, 0.0),
            Err(AcquisitionError::NegativeStd(_))
        ));
    }

    #[test]
    fn ei_limit_as_std_vanishes() {
        for (mu, best) in [(0.3, 0.1), (-0.3, 0.1), (2.0, 2.0)] {
            let ei = expected_improvement(mu, 1e-12, best).unwrap();
            assert!((ei - f64::max(mu - best, 0.0)).abs() < 1e-11);
        }
    }

    fn model_1d() -> GpModel {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = DVector::from_column_slice(&[0.0, 0.8, 0.3, -0.2]);
        GpModel::new(x, y, Hyperparams::new(0.8, 1.0, 0.01).unwrap()).unwrap()
    }

    #[test]
    fn argmax_ei_matches_exhaustive_scan() {
        let m = model_1d();
        let cands = DMatrix::from_column_slice(5, 1, &[0.5, 1.2, 1.6, 2.7, 4.0]);
        let pool = CandidatePool::new((0..5).collect());
        let got = argmax_ei(&m, &pool, &cands, 0.8).unwrap();
        let mut want = (0, f64::NEG_INFINITY);
        for i in 0..5 {
            let (mu, var) = m.predict_point(&[cands[(i, 0)]]).unwrap();
            let ei = expected_improvement(mu, var.sqrt(), 0.8).unwrap();
            if ei > want.1 {
                want = (i, ei);
            }
        }
        assert_eq!(got.index, want.0);
        assert_relative_eq!(got.score, want.1, max_relative = 1e-12);
    }

    #[test]
    fn argmax_ei_ties_and_singletons() {
        let m = model_1d();
        let same = DMatrix::from_element(4, 1, 1.5);
        let pool = CandidatePool::new(vec![0, 1, 2, 3]);
        assert_eq!(argmax_ei(&m, &pool, &same, 0.0).unwrap().index, 0);
        let one = CandidatePool::new(vec![2]);
        assert_eq!(argmax_ei(&m, &one, &same, 0.0).unwrap().index, 2);
        let empty = CandidatePool::new(vec![]);
        assert_eq!(argmax_ei(&m, &empty, &same, 0.0), Err(AcquisitionError::ExhaustedPool));
    }

    #[test]
    fn maximin_hand_case() {
        let cands = DMatrix::from_column_slice(3, 1, &[0.1, 0.5, 0.9]);
        let used = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let pick = maximin_next(&CandidatePool::new(vec![0, 1, 2]), &used, &cands).unwrap();
        assert_eq!(pick.index, 1);
        assert_relative_eq!(pick.score, 0.5);
    }

    #[test]
    fn maximin_never_picks_used_location_when_alternatives_exist() {
        let cands = DMatrix::from_column_slice(3, 1, &[0.0, 0.2, 1.0]);
        let used = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let pick = maximin_next(&CandidatePool::new(vec![0, 1, 2]), &used, &cands).unwrap();
        assert_eq!(pick.index, 1);
        assert_eq!(min_distance(&cands, 0, &used), 0.0);
    }

    #[test]
    fn maximin_errors() {
        let cands = DMatrix::from_column_slice(1, 1, &[0.0]);
        let used = DMatrix::from_column_slice(1, 1, &[0.0]);
        assert_eq!(
            maximin_next(&CandidatePool::new(vec![]), &used, &cands),
            Err(AcquisitionError::ExhaustedPool)
        );
        assert_eq!(
            maximin_next(&CandidatePool::new(vec![0]), &DMatrix::zeros(0, 1), &cands),
            Err(AcquisitionError::NoUsedPoints)
        );
    }

    #[test]
    fn nearest_unused_respects_radius() {
        let cands = DMatrix::from_column_slice(3, 1, &[0.0, 0.4, 2.0]);
        let pool = CandidatePool::new(vec![1, 2]);
        assert_eq!(nearest_unused(&pool, &cands, &[0.1], None).map(|p| p.0), Some(1));
        assert_eq!(nearest_unused(&pool, &cands, &[0.1], Some(0.2)), None);
    }

    fn brute_force_maximin(pool: &[usize], used: &DMatrix<f64>, cands: &DMatrix<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, -1.0);
        for &p in pool {
            let mut g = f64::INFINITY;
            for e in 0..used.nrows() {
                let mut s = 0.0;
                for k in 0..cands.ncols() {
                    s += (cands[(p, k)] - used[(e, k)]).powi(2);
                }
                g = g.min(s.sqrt());
            }
            if g > best.1 {
                best = (p, g);
            }
        }
        best
    }

    proptest! {
        #[test]
        fn maximin_equals_brute_force(seed in 0u64..500, m in 1usize..30, e in 1usize..10) {
            let mut r = rng::seeded(seed);
            let cands = DMatrix::from_fn(m, 3, |_, _| r.random_range(-1.0..1.0));
            let used = DMatrix::from_fn(e, 3, |_, _| r.random_range(-1.0..1.0));
            let pool: Vec<usize> = (0..m).filter(|i| i % 3 != 1 || m < 3).collect();
            let got = maximin_next(&CandidatePool::new(pool.clone()), &used, &cands).unwrap();
            let want = brute_force_maximin(&pool, &used, &cands);
            prop_assert_eq!(got.index, want.0);
            prop_assert!((got.score - want.1).abs() < 1e-12);

            // ordering of the used set is irrelevant
            let reversed = DMatrix::from_fn(e, 3, |i, j| used[(e - 1 - i, j)]);
            let again = maximin_next(&CandidatePool::new(pool), &reversed, &cands).unwrap();
            prop_assert_eq!(again.index, got.index);
        }

        #[test]
        fn ei_monotone(mu in -3.0f64..3.0, s in 0.0f64..3.0, best in -3.0f64..3.0, dm in 0.0f64..1.0, ds in 0.0f64..1.0) {
            let base = expected_improvement(mu, s, best).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!(expected_improvement(mu + dm, s, best).unwrap() >= base - 1e-15);
            if mu <= best {
                prop_assert!(expected_improvement(mu, s + ds, best).unwrap() >= base - 1e-15);
            }
        }
    }
}
