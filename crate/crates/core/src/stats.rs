//! Regression and classification metrics, and the pooled two-sample t-test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{GalError, Result};
use crate::linalg::Matrix;

/// Reported as R² when the truth is constant but predictions miss it, where
/// the ratio would be −∞.
pub const R2_CONSTANT_TRUTH_SENTINEL: f64 = -1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub mse: f64,
    pub r2: f64,
}

impl RegressionMetrics {
    /// Metric by name: `mae`, `mse` or `r2`.
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "mae" => Some(self.mae),
            "mse" => Some(self.mse),
            "r2" => Some(self.r2),
            _ => None,
        }
    }
}

pub fn regression_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<RegressionMetrics> {
    if y_true.len() != y_pred.len() {
        return Err(GalError::LengthMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(GalError::EmptyVector);
    }
    let n = y_true.len() as f64;
    let mut abs = 0.0;
    let mut ss_res = 0.0;
    for (t, p) in y_true.iter().zip(y_pred) {
        abs += (t - p).abs();
        ss_res += (t - p) * (t - p);
    }
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        0.0
    } else {
        R2_CONSTANT_TRUTH_SENTINEL
    };
    Ok(RegressionMetrics {
        mae: abs / n,
        mse: ss_res / n,
        r2,
    })
}

/// Row-wise argmax of a score matrix.
pub fn argmax_rows(scores: &Matrix) -> Vec<usize> {
    scores
        .row_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

/// Fraction of rows whose argmax differs from the label.
pub fn classification_error(scores: &Matrix, labels: &[usize]) -> Result<f64> {
    if scores.rows() != labels.len() {
        return Err(GalError::LengthMismatch {
            expected: scores.rows(),
            got: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(GalError::EmptyVector);
    }
    let wrong = argmax_rows(scores)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p != l)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(GalError::EmptyVector);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Standard deviation with the `n − 1` denominator; 0 for a single value.
pub fn sample_std(xs: &[f64]) -> Result<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Ok(0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Ok((ss / (xs.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_stat: f64,
    pub p_value: f64,
    pub df: usize,
}

/// Two-tailed p-value of Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Equal-variance t-test from summary statistics (sample standard
/// deviations). The sign of `t` follows `mean_a − mean_b`.
pub fn t_test_from_summary(
    mean_a: f64,
    sd_a: f64,
    n_a: usize,
    mean_b: f64,
    sd_b: f64,
    n_b: usize,
) -> Result<TTestResult> {
    if n_a < 2 || n_b < 2 {
        return Err(GalError::InvalidConfig(format!(
            "t-test needs at least 2 samples per arm, got {n_a} and {n_b}"
        )));
    }
    let df = n_a + n_b - 2;
    let pooled = ((n_a - 1) as f64 * sd_a * sd_a + (n_b - 1) as f64 * sd_b * sd_b) / df as f64;
    if !(pooled > 0.0) {
        return Err(GalError::ZeroVariance);
    }
    let se = (pooled * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    let t_stat = (mean_a - mean_b) / se;
    if !t_stat.is_finite() {
        return Err(GalError::NonFinite("t statistic".into()));
    }
    Ok(TTestResult {
        t_stat,
        p_value: student_t_two_tailed_p(t_stat, df as f64),
        df,
    })
}

pub fn two_sample_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(GalError::InvalidConfig(format!(
            "t-test needs at least 2 samples per arm, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    t_test_from_summary(
        mean(a)?,
        sample_std(a)?,
        a.len(),
        mean(b)?,
        sample_std(b)?,
        b.len(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let m = regression_metrics(&[1., 2., 3.], &[1., 2., 3.]).unwrap();
        assert_eq!((m.mae, m.mse, m.r2), (0.0, 0.0, 1.0));
        let m = regression_metrics(&[1., 2., 3.], &[2., 2., 2.]).unwrap();
        assert_eq!(m.r2, 0.0);
        let m = regression_metrics(&[1., 2., 3.], &[1., 2., 4.]).unwrap();
        assert!((m.mae - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.mse - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.r2 - 0.5).abs() < 1e-15);
        assert_eq!(regression_metrics(&[2., 2.], &[2., 2.]).unwrap().r2, 0.0);
        assert_eq!(
            regression_metrics(&[2., 2.], &[2., 3.]).unwrap().r2,
            R2_CONSTANT_TRUTH_SENTINEL
        );
        assert!(regression_metrics(&[1.], &[1., 2.]).is_err());
        assert!(regression_metrics(&[], &[]).is_err());
    }

    #[test]
    fn classification_error_counts_misses() {
        let s = Matrix::new(3, 2, vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4]).unwrap();
        assert!((classification_error(&s, &[0, 1, 1]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn t_test_examples() {
        let a = [1.0, 2.0, 3.5, 4.0];
        let r = two_sample_t_test(&a, &a).unwrap();
        assert_eq!((r.t_stat, r.p_value, r.df), (0.0, 1.0, 6));
        assert!(matches!(
            two_sample_t_test(&[1., 1.], &[1., 1.]),
            Err(GalError::ZeroVariance)
        ));
        assert!(two_sample_t_test(&[1.], &[1., 2.]).is_err());

        let boston = t_test_from_summary(3.9535, 0.4307, 5, 2.8079, 0.2720, 5).unwrap();
        assert!((boston.t_stat - 5.02).abs() < 0.01, "{boston:?}");
        assert!(
            (boston.p_value - 1.02e-3).abs() / 1.02e-3 < 0.05,
            "{boston:?}"
        );
        // Reference values from scipy.stats.ttest_ind_from_stats. The
        // published pair (7.43, 7.34e-05) was computed from unrounded
        // summaries, so t differs in the second decimal.
        let diabetes = t_test_from_summary(44.3832, 0.7752, 5, 41.6186, 0.2989, 5).unwrap();
        assert!(
            (diabetes.t_stat - 7.440563720528856).abs() < 1e-10,
            "{diabetes:?}"
        );
        assert!(
            (diabetes.p_value - 7.330079928901435e-05).abs() < 1e-15,
            "{diabetes:?}"
        );
        assert!(
            (diabetes.p_value - 7.34e-5).abs() / 7.34e-5 < 0.05,
            "{diabetes:?}"
        );
        assert!((boston.t_stat - 5.028756783052488).abs() < 1e-10);
        assert!((boston.p_value - 0.0010157358162214561).abs() < 1e-15);
    }

    /// Independent check of the incomplete-beta tail against simulated
    /// Student-t draws.
    #[test]
    fn p_value_matches_monte_carlo() {
        let mut rng = SeededRng::new(2024);
        for df in [3.0, 8.0, 30.0] {
            let dist = rand_distr::StudentT::new(df).unwrap();
            let draws = 1_000_000;
            let samples: Vec<f64> = (0..draws).map(|_| rng.sample(&dist).abs()).collect();
            for t in [0.5, 1.0, 2.0, 3.0] {
                let empirical = samples.iter().filter(|&&s| s >= t).count() as f64 / draws as f64;
                let exact = student_t_two_tailed_p(t, df);
                assert!(
                    (empirical - exact).abs() < 1e-3,
                    "df {df}, t {t}: {empirical} vs {exact}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn mae_squared_at_most_mse(pairs in prop::collection::vec((-100f64..100.0, -100f64..100.0), 1..40)) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = regression_metrics(&t, &p).unwrap();
            prop_assert!(m.mae * m.mae <= m.mse * (1.0 + 1e-12) + 1e-12);
            prop_assert!(m.r2 <= 1.0);
        }

        #[test]
        fn r2_is_shift_invariant(pairs in prop::collection::vec((-10f64..10.0, -10f64..10.0), 2..30), shift in -50f64..50.0) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = regression_metrics(&t, &p).unwrap();
            prop_assume!(a.r2 != R2_CONSTANT_TRUTH_SENTINEL && a.r2 > -1e6);
            let ts: Vec<f64> = t.iter().map(|v| v + shift).collect();
            let ps: Vec<f64> = p.iter().map(|v| v + shift).collect();
            let b = regression_metrics(&ts, &ps).unwrap();
            prop_assert!((a.r2 - b.r2).abs() <= 1e-12 * (1.0 + a.r2.abs()) * 100.0);
        }

        #[test]
        fn t_test_is_antisymmetric(
            a in prop::collection::vec(-10f64..10.0, 2..10),
            b in prop::collection::vec(-10f64..10.0, 2..10),
        ) {
            let Ok(ab) = two_sample_t_test(&a, &b) else { return Ok(()); };
            let ba = two_sample_t_test(&b, &a).unwrap();
            prop_assert_eq!(ab.t_stat, -ba.t_stat);
            prop_assert!((ab.p_value - ba.p_value).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
        }
    }
}
