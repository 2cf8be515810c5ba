//! Small statistics helpers for replication output.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN, count: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, se, count: n }
    }
}

/// Batch-means estimate for a correlated series: split into `batches`
/// contiguous blocks and treat block averages as independent.
pub fn batch_means(values: &[f64], batches: usize) -> MeanSe {
    assert!(batches >= 2 && values.len() >= batches);
    let size = values.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|k| values[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    MeanSe::of(&means)
}

/// Pearson chi-square statistic and p-value of `samples` against the uniform
/// law on `[lo, hi]` with equal-width bins.
pub fn chi_square_uniform(samples: &[f64], lo: f64, hi: f64, bins: usize) -> (f64, f64) {
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let k = (((x - lo) / (hi - lo)) * bins as f64).floor();
        let k = (k.max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let expected = samples.len() as f64 / bins as f64;
    let stat = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum::<f64>();
    let dist = ChiSquared::new((bins - 1) as f64).expect("positive degrees of freedom");
    (stat, 1.0 - dist.cdf(stat))
}
