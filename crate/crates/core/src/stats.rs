//! Ensemble statistics in log space.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{child_seed, substream, tag};

/// `log(mean(exp(x)))`, stable for large `x`.
pub fn log_mean_exp(logs: &[f64]) -> f64 {
    if logs.is_empty() {
        return f64::NAN;
    }
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = logs.iter().map(|x| (x - m).exp()).sum();
    m + (s / logs.len() as f64).ln()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if n < 2.0 {
        return f64::INFINITY;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Kish effective sample size of nonnegative weights given by their logs.
pub fn effective_sample_size(logs: &[f64]) -> f64 {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return 0.0;
    }
    let (s1, s2) = logs.iter().fold((0.0, 0.0), |(a, b), x| {
        let w = (x - m).exp();
        (a + w, b + w * w)
    });
    s1 * s1 / s2
}

/// Point estimate with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn exact(x: f64) -> Self {
        Self { estimate: x, lo: x, hi: x }
    }

    /// Half of the interval width.
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

/// Percentile bootstrap (95%) of a statistic of index resamples.
pub fn bootstrap(n: usize, resamples: usize, seed: u64, estimate: f64, mut stat: impl FnMut(&[usize]) -> f64) -> Interval {
    let mut rng = substream(child_seed(seed, tag::BOOTSTRAP, n as u64), 0);
    let mut idx = vec![0usize; n];
    let mut vals: Vec<f64> = (0..resamples)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            stat(&idx)
        })
        .filter(|v| !v.is_nan())
        .collect();
    if vals.is_empty() {
        return Interval { estimate, lo: f64::NEG_INFINITY, hi: f64::INFINITY };
    }
    vals.sort_by(f64::total_cmp);
    let q = |p: f64| vals[((p * (vals.len() - 1) as f64).round() as usize).min(vals.len() - 1)];
    Interval { estimate, lo: q(0.025).min(estimate), hi: q(0.975).max(estimate) }
}

/// Bootstrap interval for `log mean exp(logs)`.
pub fn log_mean_exp_interval(logs: &[f64], resamples: usize, seed: u64) -> Interval {
    let est = log_mean_exp(logs);
    let mut buf = Vec::with_capacity(logs.len());
    bootstrap(logs.len(), resamples, seed, est, |idx| {
        buf.clear();
        buf.extend(idx.iter().map(|&i| logs[i]));
        log_mean_exp(&buf)
    })
}

/// Ordinary least squares `y ≈ a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Median of a sample (NaNs excluded).
pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
