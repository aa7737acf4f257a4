//! Small summary statistics for comparing sweeps across seeds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn std_err(xs: &[f64]) -> f64 {
    std_dev(xs) / (xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    /// Mean of `larger - smaller` over pairs.
    pub mean_difference: f64,
    pub t: f64,
    pub degrees_of_freedom: f64,
    /// One-sided p-value for "the first sample is not larger".
    pub p_value: f64,
}

impl PairedTest {
    pub fn rejects_at(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// One-sided paired t-test of `larger[i] > smaller[i]` on average.
///
/// Returns `None` for fewer than two pairs or mismatched lengths.
pub fn paired_t_greater(larger: &[f64], smaller: &[f64]) -> Option<PairedTest> {
    if larger.len() != smaller.len() || larger.len() < 2 {
        return None;
    }
    let diffs: Vec<f64> = larger.iter().zip(smaller).map(|(a, b)| a - b).collect();
    let n = diffs.len() as f64;
    let m = mean(&diffs);
    let se = std_err(&diffs);
    let df = n - 1.0;
    let (t, p_value) = if se == 0.0 {
        // all differences equal: certain in their direction
        let t = if m > 0.0 {
            f64::INFINITY
        } else if m < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        (t, if m > 0.0 { 0.0 } else { 1.0 })
    } else {
        let t = m / se;
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (t, 1.0 - dist.cdf(t))
    };
    Some(PairedTest {
        mean_difference: m,
        t,
        degrees_of_freedom: df,
        p_value,
    })
}
