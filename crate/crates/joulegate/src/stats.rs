//! Paired-sample significance testing for matched result sets.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Paired t-test outcome on per-item differences a_i - b_i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub two_tailed_p: f64,
    /// P(T >= t): tests whether mean(a - b) is positive.
    pub one_tailed_p: f64,
    pub mean_delta: f64,
    pub df: u64,
    /// All differences were identical (zero variance); t is reported as 0
    /// when the mean difference is also 0, infinite otherwise.
    pub degenerate: bool,
}

/// Standard paired t statistic on differences, with p-values from the t
/// distribution at n-1 degrees of freedom.
pub fn paired_t_test(samples_a: &[f64], samples_b: &[f64]) -> Result<PairedTTest> {
    if samples_a.len() != samples_b.len() {
        return Err(Error::Usage(format!(
            "paired t-test requires equal lengths, got {} and {}",
            samples_a.len(),
            samples_b.len()
        )));
    }
    let n = samples_a.len();
    if n < 2 {
        return Err(Error::Usage("paired t-test requires at least 2 pairs".into()));
    }

    let diffs: Vec<f64> = samples_a.iter().zip(samples_b).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    let df = (n - 1) as u64;

    if sd == 0.0 {
        // zero variance: identical differences across all pairs
        let (t, two_tailed_p, one_tailed_p) = if mean == 0.0 {
            (0.0, 1.0, 0.5)
        } else if mean > 0.0 {
            (f64::INFINITY, 0.0, 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0, 1.0)
        };
        return Ok(PairedTTest { t, two_tailed_p, one_tailed_p, mean_delta: mean, df, degenerate: true });
    }

    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::Domain(format!("t distribution: {e}")))?;
    let two_tailed_p = 2.0 * (1.0 - dist.cdf(t.abs()));
    let one_tailed_p = 1.0 - dist.cdf(t);
    Ok(PairedTTest { t, two_tailed_p, one_tailed_p, mean_delta: mean, df, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_are_degenerate() {
        let a = [3.0, 1.0, 4.0, 1.5];
        let result = paired_t_test(&a, &a).unwrap();
        assert!(result.degenerate);
        assert_eq!(result.t, 0.0);
        assert_eq!(result.two_tailed_p, 1.0);
        assert_eq!(result.mean_delta, 0.0);
    }

    #[test]
    fn zero_mean_unit_sd_gives_t_zero() {
        // diffs [-1, 0, 1]: mean 0, sd 1, t = 0
        let result = paired_t_test(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!(!result.degenerate);
        assert!(result.t.abs() < 1e-15);
        assert!((result.two_tailed_p - 1.0).abs() < 1e-12);
        assert_eq!(result.mean_delta, 0.0);
    }

    #[test]
    fn hand_computed_four_pair_case() {
        // diffs [1, 1, 1, 2]: mean 1.25, var 0.25, sd 0.5, t = 1.25/(0.5/2) = 5
        let result = paired_t_test(&[1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 2.0, 2.0]).unwrap();
        assert!((result.mean_delta - 1.25).abs() < 1e-12);
        assert!((result.t - 5.0).abs() < 1e-12);
        assert_eq!(result.df, 3);
        assert!(result.one_tailed_p < result.two_tailed_p);
    }

    #[test]
    fn length_mismatch_is_usage_error() {
        assert!(matches!(paired_t_test(&[1.0, 2.0], &[1.0]), Err(Error::Usage(_))));
        assert!(matches!(paired_t_test(&[1.0], &[1.0]), Err(Error::Usage(_))));
    }
}
