//! Error metrics and distribution summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {predicted} predictions for {actual} targets")]
    Shape { predicted: usize, actual: usize },
    #[error("cannot score empty vectors")]
    Empty,
}

/// Root mean square error.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    if predicted.len() != actual.len() {
        return Err(MetricError::Shape {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricError::Empty);
    }
    let sse: f64 = predicted.iter().zip(actual).map(|(p, a)| (a - p) * (a - p)).sum();
    Ok((sse / actual.len() as f64).sqrt())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear-interpolation quantile of sorted data (the "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

/// Box-and-whisker statistics; whiskers reach the most extreme data within
/// 1.5 IQR of the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<BoxStats> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&s, 0.25);
        let q3 = quantile_sorted(&s, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence).collect();
        Some(BoxStats {
            min: s[0],
            q1,
            median: quantile_sorted(&s, 0.5),
            q3,
            max: s[s.len() - 1],
            whisker_low: inside.first().copied().unwrap_or(q1),
            whisker_high: inside.last().copied().unwrap_or(q3),
            outliers: s.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmse_hand_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let r = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((r - 3.535_533_905_932_737_8).abs() < 1e-12);
        assert_eq!(
            rmse(&[0.0], &[1.0, 2.0]),
            Err(MetricError::Shape { predicted: 1, actual: 2 })
        );
        assert_eq!(rmse(&[], &[]), Err(MetricError::Empty));
    }

    #[test]
    fn quartiles_match_linear_interpolation() {
        // numpy.percentile([1, 2, 3, 4, 10], [25, 50, 75]) -> 2, 3, 4
        let b = BoxStats::from_values(&[10.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert_eq!(b.whisker_high, 4.0);
        assert_eq!(b.outliers, vec![10.0]);
        assert!((quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn constant_values_give_zero_width_box() {
        let b = BoxStats::from_values(&[0.3; 20]).unwrap();
        assert_eq!(b.q1, b.q3);
        assert_eq!(b.whisker_low, b.whisker_high);
        assert!(b.outliers.is_empty());
    }

    proptest! {
        #[test]
        fn rmse_permutation_invariant(v in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..30), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let (p, a): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.shuffle(&mut crate::rng::seeded(seed));
            let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let aa: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            let r1 = rmse(&p, &a).unwrap();
            let r2 = rmse(&pp, &aa).unwrap();
            prop_assert!((r1 - r2).abs() <= 1e-12 * (1.0 + r1));
            prop_assert!(r1 >= 0.0);
        }
    }
}
