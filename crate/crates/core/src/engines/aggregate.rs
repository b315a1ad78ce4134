//! Turning a cumulative byte series into a single speed figure.

use thiserror::Error;

use super::Sample;

/// Number of equal-width buckets the adaptive engine aggregates over.
pub const AGGREGATE_BUCKETS: usize = 20;
/// Lowest buckets discarded (a quarter of 20).
pub const DISCARD_LOW: usize = 5;
/// Highest buckets discarded.
pub const DISCARD_HIGH: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("expected exactly {expected} samples, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("need at least {needed} raw samples to resample, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample series must end after time zero")]
    EmptySpan,
    #[error("non-finite sample value")]
    NonFinite,
}

/// Drop the 5 smallest and 2 largest of exactly 20 values, average the rest.
pub fn aggregate_discard(samples: &[f64]) -> Result<f64, AggregateError> {
    if samples.len() != AGGREGATE_BUCKETS {
        return Err(AggregateError::WrongCount {
            expected: AGGREGATE_BUCKETS,
            got: samples.len(),
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(AggregateError::NonFinite);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let kept = &sorted[DISCARD_LOW..AGGREGATE_BUCKETS - DISCARD_HIGH];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Cumulative bytes at time `t`, linearly interpolated between samples with an
/// implicit `(0, 0)` origin.
fn bytes_at(samples: &[Sample], t: f64) -> f64 {
    let (mut t0, mut b0) = (0.0, 0.0);
    for s in samples {
        let (t1, b1) = (s.t_offset_s, s.bytes_cum as f64);
        if t <= t1 {
            if t1 <= t0 {
                return b1;
            }
            return b0 + (b1 - b0) * (t - t0) / (t1 - t0);
        }
        t0 = t1;
        b0 = b1;
    }
    b0
}

/// Re-bin a sample series into `buckets` equal-duration speeds (bits/s)
/// spanning `[0, last sample]`.
pub fn resample(samples: &[Sample], buckets: usize) -> Result<Vec<f64>, AggregateError> {
    if samples.len() < buckets {
        return Err(AggregateError::TooFewSamples {
            needed: buckets,
            got: samples.len(),
        });
    }
    let end = samples.last().map(|s| s.t_offset_s).unwrap_or(0.0);
    if end <= 0.0 {
        return Err(AggregateError::EmptySpan);
    }
    let width = end / buckets as f64;
    let mut out = Vec::with_capacity(buckets);
    let mut prev = 0.0;
    for i in 1..=buckets {
        let t = if i == buckets { end } else { width * i as f64 };
        let b = bytes_at(samples, t);
        out.push((b - prev) * 8.0 / width);
        prev = b;
    }
    Ok(out)
}
