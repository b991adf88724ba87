//! Deterministic reductions over path ensembles.
//!
//! Sums are taken over fixed-size blocks that are reduced in index order, so
//! results do not depend on the size of the rayon pool.

use rayon::prelude::*;

/// Rows per reduction block.
pub const BLOCK: usize = 4096;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Mean and standard error of `values`.
///
/// The sum runs over deviations from the first entry, so a constant sample
/// returns that constant bit-exactly with zero standard error.
pub fn mean_stderr(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    if n == 0 {
        return MeanEstimate {
            mean: f64::NAN,
            stderr: f64::NAN,
            count: 0,
        };
    }
    let pivot = values[0];
    let partial: Vec<(f64, f64)> = values
        .par_chunks(BLOCK)
        .map(|chunk| {
            chunk.iter().fold((0.0, 0.0), |(s, s2), v| {
                let d = v - pivot;
                (s + d, s2 + d * d)
            })
        })
        .collect();
    let (s, s2) = partial
        .iter()
        .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let nf = n as f64;
    let shift = s / nf;
    let mean = pivot + shift;
    let stderr = if n > 1 {
        let var = ((s2 - s * shift) / (nf - 1.0)).max(0.0);
        (var / nf).sqrt()
    } else {
        0.0
    };
    MeanEstimate {
        mean,
        stderr,
        count: n,
    }
}

pub fn mean(values: &[f64]) -> f64 {
    mean_stderr(values).mean
}

/// Sample variance (unbiased).
pub fn variance(values: &[f64]) -> f64 {
    let e = mean_stderr(values);
    e.stderr * e.stderr * e.count as f64
}

/// `sqrt(a^2 + b^2)` for two independent-looking standard errors.
pub fn combine_stderr(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
