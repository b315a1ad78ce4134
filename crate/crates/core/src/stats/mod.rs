//! Analysis of paired speed-test records: normalization, relative
//! differences, hypothesis tests, server ranking and time-of-day splits.

pub mod analysis;
pub mod ranking;
pub mod records;
pub mod ttest;

use serde::Serialize;
use thiserror::Error;

pub use ranking::{rank_servers, HouseholdRanking, ServerRanking, ServerScore};
pub use records::{pair_tests, peak_offpeak_split, PairedObservation, TestRecord};
pub use ttest::{paired_t_test, student_t_cdf, student_t_quantile, welch_t_test, StatResult, MIN_RELIABLE_N};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("series is empty")]
    EmptySeries,
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("relative difference {0} outside [-1, 1]")]
    DeltaOutOfRange(f64),
    #[error("need at least {needed} observations, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degrees of freedom must be positive, got {0}")]
    NonPositiveDf(f64),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("timestamp '{0}' has no timezone; time-of-day analysis needs zoned timestamps")]
    NaiveTimestamp(String),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("input: {0}")]
    Input(String),
}

/// Nearest-rank percentile: the element at 1-based rank `ceil(pct/100 · n)`
/// of the sorted series. Always an observed value.
pub fn percentile_nearest_rank(series: &[f64], pct: u32) -> Result<f64, StatsError> {
    if series.is_empty() {
        return Err(StatsError::EmptySeries);
    }
    if series.iter().any(|v| v.is_nan()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (pct.min(100) as usize * n).div_ceil(100).max(1);
    Ok(sorted[rank - 1])
}

/// A household's nominal speed: the 95th percentile of its measured speeds.
pub fn nominal_speed(series: &[f64]) -> Result<f64, StatsError> {
    percentile_nearest_rank(series, 95)
}

pub fn normalize(speed: f64, s95: f64) -> Result<f64, StatsError> {
    if !(s95 > 0.0) {
        return Err(StatsError::NonPositive {
            what: "nominal speed",
            value: s95,
        });
    }
    Ok(speed / s95)
}

/// Signed relative difference, positive when the adaptive (multi-stream)
/// test reports more. Bounded to [-1, 1].
pub fn rel_diff(s_adaptive: f64, s_single: f64) -> Result<f64, StatsError> {
    for (what, value) in [("adaptive speed", s_adaptive), ("single-stream speed", s_single)] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(StatsError::NonPositive { what, value });
        }
    }
    Ok((s_adaptive - s_single) / s_adaptive.max(s_single))
}

/// Magnitude bins for a paired relative difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum RelDiffClass {
    /// 0 < δ ≤ 0.05
    AdaptiveHigherLow,
    /// 0.05 < δ ≤ 0.25
    AdaptiveHigherMedium,
    /// 0.25 < δ ≤ 1
    AdaptiveHigherHigh,
    /// -0.05 ≤ δ < 0
    SingleHigherLow,
    /// -0.25 ≤ δ < -0.05
    SingleHigherMedium,
    /// -1 ≤ δ < -0.25
    SingleHigherHigh,
}

impl RelDiffClass {
    pub const ALL: [RelDiffClass; 6] = [
        RelDiffClass::AdaptiveHigherLow,
        RelDiffClass::AdaptiveHigherMedium,
        RelDiffClass::AdaptiveHigherHigh,
        RelDiffClass::SingleHigherLow,
        RelDiffClass::SingleHigherMedium,
        RelDiffClass::SingleHigherHigh,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RelDiffClass::AdaptiveHigherLow => "adaptive_higher_low",
            RelDiffClass::AdaptiveHigherMedium => "adaptive_higher_medium",
            RelDiffClass::AdaptiveHigherHigh => "adaptive_higher_high",
            RelDiffClass::SingleHigherLow => "single_higher_low",
            RelDiffClass::SingleHigherMedium => "single_higher_medium",
            RelDiffClass::SingleHigherHigh => "single_higher_high",
        }
    }
}

/// Classification of one pair: one of the six bins, or exactly equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum PairOutcome {
    Class(RelDiffClass),
    Equal,
}

impl PairOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairOutcome::Class(c) => c.as_str(),
            PairOutcome::Equal => "equal",
        }
    }
}

pub fn classify(delta: f64) -> Result<PairOutcome, StatsError> {
    use RelDiffClass::*;
    if !(-1.0..=1.0).contains(&delta) {
        return Err(StatsError::DeltaOutOfRange(delta));
    }
    let class = if delta == 0.0 {
        return Ok(PairOutcome::Equal);
    } else if delta > 0.25 {
        AdaptiveHigherHigh
    } else if delta > 0.05 {
        AdaptiveHigherMedium
    } else if delta > 0.0 {
        AdaptiveHigherLow
    } else if delta >= -0.05 {
        SingleHigherLow
    } else if delta >= -0.25 {
        SingleHigherMedium
    } else {
        SingleHigherHigh
    };
    Ok(PairOutcome::Class(class))
}

/// Ratio of 90th percentiles (nearest rank) of a test series and a
/// reference series.
pub fn consistency_ratio(series_test: &[f64], series_ref: &[f64]) -> Result<f64, StatsError> {
    let t = percentile_nearest_rank(series_test, 90)?;
    let r = percentile_nearest_rank(series_ref, 90)?;
    if !(r > 0.0) {
        return Err(StatsError::NonPositive {
            what: "reference 90th percentile",
            value: r,
        });
    }
    Ok(t / r)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
