//! Monte Carlo summary statistics. All reductions run left to right over the
//! sample so results are bit-reproducible.

use serde::{Deserialize, Serialize};

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_error: 0.0 }
    }

    /// Sample mean of `xs` and the standard error of that mean.
    pub fn of_mean(xs: &[f64]) -> Self {
        let n = xs.len();
        let value = mean(xs);
        let std_error = if n > 1 { (variance(xs) / n as f64).sqrt() } else { 0.0 };
        Self { value, std_error }
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |acc, x| acc + x)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().fold(0.0, |acc, x| acc + (x - m) * (x - m)) / (n - 1) as f64
}

/// Variance with the 1/n normalization (second central moment of the sample).
pub fn central_second_moment(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().fold(0.0, |acc, x| acc + (x - m) * (x - m)) / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let c = covariance(x, y);
    c.value / (variance(x) * variance(y)).sqrt()
}

/// Sample covariance of paired draws, with the standard error obtained from
/// the spread of the centered products.
pub fn covariance(x: &[f64], y: &[f64]) -> Estimate {
    assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let products: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    Estimate::of_mean(&products)
}

/// Estimate of `E[x^2]` with standard error.
pub fn second_moment(x: &[f64]) -> Estimate {
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    Estimate::of_mean(&sq)
}

/// Sample variance with a delta-method standard error
/// `sqrt((m4 - s^4) / n)`.
pub fn variance_estimate(x: &[f64]) -> Estimate {
    let n = x.len() as f64;
    let m = mean(x);
    let s2 = variance(x);
    let m4 = x.iter().fold(0.0, |acc, v| acc + (v - m).powi(4)) / n;
    Estimate { value: s2, std_error: ((m4 - s2 * s2).max(0.0) / n).sqrt() }
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic 99% critical value of the two-sample KS statistic.
pub fn ks_critical_99(na: usize, nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    1.627_6 * ((na + nb) / (na * nb)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_moments() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert!((variance(&x) - 5.0 / 3.0).abs() < 1e-15);
        assert!((central_second_moment(&x) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn ks_identical_samples_is_zero() {
        let x = [0.3, -1.0, 2.0, 0.1];
        assert_eq!(ks_two_sample(&x, &x), 0.0);
    }

    #[test]
    fn ks_disjoint_samples_is_one() {
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[5.0, 6.0, 7.0]), 1.0);
    }

    #[test]
    fn ks_handles_ties() {
        // F_a jumps to 1 at 1, F_b is 2/3 at 1.
        let d = ks_two_sample(&[1.0, 1.0], &[1.0, 1.0, 2.0]);
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
    }
}
