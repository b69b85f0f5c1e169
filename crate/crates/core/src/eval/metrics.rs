//! Forecast accuracy metrics with compensated summation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neumaier-compensated sum; keeps 10k-point accumulations exact to well
/// below the reporting tolerances.
pub(crate) fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut compensation = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            compensation += (sum - t) + v;
        } else {
            compensation += (v - t) + sum;
        }
        sum = t;
    }
    sum + compensation
}

fn check_lengths(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::DimMismatch {
            context: "metric inputs".into(),
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("metrics need at least one point"));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth, pred)?;
    let sum = compensated_sum(truth.iter().zip(pred).map(|(y, p)| (y - p).abs()));
    Ok(sum / truth.len() as f64)
}

/// Root mean squared error.
pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth, pred)?;
    let sum = compensated_sum(truth.iter().zip(pred).map(|(y, p)| (y - p) * (y - p)));
    Ok((sum / truth.len() as f64).sqrt())
}

/// Relative improvement of `ours` over `baseline`, in percent.
pub fn improvement_pct(ours: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::invalid(format!(
            "improvement needs a positive baseline, got {baseline}"
        )));
    }
    Ok((baseline - ours) / baseline * 100.0)
}

/// One (model, farm) metric row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub model: String,
    pub farm_id: String,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

impl MetricResult {
    pub fn compute(model: &str, farm_id: &str, truth: &[f64], pred: &[f64]) -> Result<Self> {
        Ok(MetricResult {
            model: model.into(),
            farm_id: farm_id.into(),
            mae: mae(truth, pred)?,
            rmse: rmse(truth, pred)?,
            n: truth.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    /// Pairwise summation; the independent high-precision route.
    fn pairwise_sum(values: &[f64]) -> f64 {
        match values.len() {
            0 => 0.0,
            1 => values[0],
            n => {
                let mid = n / 2;
                pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
            }
        }
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        let y = vec![0.1, 0.9, 0.4];
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn hand_forced_values() {
        assert!((mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let r = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matches_pairwise_oracle_on_10k_points() {
        let mut rng = seed::rng(seed::derive(61, "metric-oracle"));
        let n = 10_000;
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let abs_terms: Vec<f64> = truth.iter().zip(&pred).map(|(y, p)| (y - p).abs()).collect();
        let sq_terms: Vec<f64> = truth
            .iter()
            .zip(&pred)
            .map(|(y, p)| (y - p) * (y - p))
            .collect();
        let mae_oracle = pairwise_sum(&abs_terms) / n as f64;
        let rmse_oracle = (pairwise_sum(&sq_terms) / n as f64).sqrt();
        let m = mae(&truth, &pred).unwrap();
        let r = rmse(&truth, &pred).unwrap();
        assert!((m - mae_oracle).abs() / mae_oracle < 1e-12);
        assert!((r - rmse_oracle).abs() / rmse_oracle < 1e-12);
    }

    #[test]
    fn rmse_dominates_mae_on_random_residuals() {
        let mut rng = seed::rng(seed::derive(62, "jensen"));
        for _ in 0..1000 {
            let n = rng.random_range(1..64);
            let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = mae(&truth, &pred).unwrap();
            let r = rmse(&truth, &pred).unwrap();
            assert!(r >= m - 1e-12, "rmse {r} < mae {m}");
        }
    }

    #[test]
    fn metrics_are_pair_permutation_invariant_and_homogeneous() {
        let mut rng = seed::rng(seed::derive(63, "metric-props"));
        let n = 64;
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let m0 = mae(&truth, &pred).unwrap();
        let r0 = rmse(&truth, &pred).unwrap();
        // permute pairs
        let mut idx: Vec<usize> = (0..n).collect();
        idx.reverse();
        idx.swap(3, 17);
        let t2: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
        let p2: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        assert!((mae(&t2, &p2).unwrap() - m0).abs() < 1e-12);
        assert!((rmse(&t2, &p2).unwrap() - r0).abs() < 1e-12);
        // scale residuals by c > 0
        let c = 3.5;
        let scaled_pred: Vec<f64> = truth
            .iter()
            .zip(&pred)
            .map(|(y, p)| y + c * (p - y))
            .collect();
        assert!((mae(&truth, &scaled_pred).unwrap() - c * m0).abs() < 1e-10);
        assert!((rmse(&truth, &scaled_pred).unwrap() - c * r0).abs() < 1e-10);
    }

    #[test]
    fn improvement_percentages() {
        // recomputed from reported table pairs
        let p = improvement_pct(1.0509, 1.1520).unwrap();
        assert!((p - 8.776).abs() < 5e-3, "{p}");
        let p = improvement_pct(0.1435, 0.1550).unwrap();
        assert!((p - 7.4194).abs() < 1e-3, "{p}");
        assert_eq!(improvement_pct(0.5, 0.5).unwrap(), 0.0);
        assert!(improvement_pct(0.1, 0.0).is_err());
    }

    #[test]
    fn length_mismatch_and_empty_are_errors() {
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }
}
