//! Small statistics helpers: normal CDF, Kolmogorov-Smirnov goodness of fit,
//! and moment accumulators used by the Monte Carlo experiments.

use statrs::distribution::{ContinuousCDF, Normal};

/// Standard normal CDF.
pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// One-sample KS statistic against the standard normal law.
pub fn ks_statistic_normal(sample: &[f64]) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = standard_normal_cdf(*x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        sup = sup.max((f - lo).abs()).max((hi - f).abs());
    }
    sup
}

/// Asymptotic Kolmogorov distribution p-value with the Stephens small-sample
/// correction: `p = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)` at
/// `lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) D`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS test of a sample against the standard normal: `(statistic, p_value)`.
pub fn ks_test_normal(sample: &[f64]) -> (f64, f64) {
    let d = ks_statistic_normal(sample);
    (d, ks_p_value(d, sample.len()))
}

/// Mean of a slice.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len().saturating_sub(1)) as f64
}

/// Accumulates entrywise first/second moments of a stream of equally-sized
/// vectors; used for empirical covariance matrices with standard errors.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    pub count: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(len: usize) -> Self {
        Self { count: 0, sum: vec![0.0; len], sum_sq: vec![0.0; len] }
    }

    pub fn push(&mut self, xs: &[f64]) {
        debug_assert_eq!(xs.len(), self.sum.len());
        self.count += 1;
        for (i, x) in xs.iter().enumerate() {
            self.sum[i] += x;
            self.sum_sq[i] += x * x;
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.count as f64).collect()
    }

    /// Standard error of each entry's mean.
    pub fn standard_error(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, sq)| {
                let m = s / n;
                let var = (sq / n - m * m).max(0.0) * n / (n - 1.0).max(1.0);
                (var / n).sqrt()
            })
            .collect()
    }
}
