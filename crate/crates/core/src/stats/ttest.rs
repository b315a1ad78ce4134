//! Student-t distribution and the paired / Welch two-sample t-tests.

use serde::Serialize;

use super::StatsError;

/// Below this many observations the normal approximation behind the tests is
/// considered shaky and results carry a warning flag.
pub const MIN_RELIABLE_N: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatResult {
    pub t_stat: f64,
    pub df: f64,
    pub p_two_sided: f64,
    pub reject_at_alpha: bool,
    pub alpha: f64,
    /// Fewer than [`MIN_RELIABLE_N`] observations (per group for Welch).
    pub small_sample: bool,
    /// Sample variance was zero; `p` is 0 or 1 by convention.
    pub degenerate_variance: bool,
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for I_x(a, b), modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..20_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b), with `y = 1 - x` passed separately
/// so callers can keep precision when x is close to 1.
pub fn reg_inc_beta(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * y.ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, y) / b
    }
}

/// Two-sided tail mass P(|T| >= |t|) for `df` degrees of freedom.
fn two_sided_tail(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    let x = df / (df + t2);
    let y = t2 / (df + t2);
    reg_inc_beta(df / 2.0, 0.5, x, y).clamp(0.0, 1.0)
}

/// CDF of Student's t distribution.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64, StatsError> {
    if !(df > 0.0) {
        return Err(StatsError::NonPositiveDf(df));
    }
    if t.is_nan() {
        return Err(StatsError::NonFinite);
    }
    if t == 0.0 {
        return Ok(0.5);
    }
    let tail = 0.5 * two_sided_tail(t, df);
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}

/// Inverse of [`student_t_cdf`], by bisection.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64, StatsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::BadAlpha(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while student_t_cdf(hi, df)? < p.max(1.0 - p) {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    let (mut lo, mut up) = if p > 0.5 { (0.0, hi) } else { (-hi, 0.0) };
    for _ in 0..200 {
        let mid = 0.5 * (lo + up);
        if student_t_cdf(mid, df)? < p {
            lo = mid;
        } else {
            up = mid;
        }
        if up - lo <= 1e-14 * mid.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + up))
}

fn check_alpha(alpha: f64) -> Result<(), StatsError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(StatsError::BadAlpha(alpha))
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

fn finish(t: f64, df: f64, alpha: f64, small: bool) -> StatResult {
    let p = two_sided_tail(t, df);
    StatResult {
        t_stat: t,
        df,
        p_two_sided: p,
        reject_at_alpha: p < alpha,
        alpha,
        small_sample: small,
        degenerate_variance: false,
    }
}

fn degenerate(mean_diff: f64, df: f64, alpha: f64, small: bool) -> StatResult {
    let (t, p) = if mean_diff == 0.0 {
        (0.0, 1.0)
    } else {
        (f64::INFINITY.copysign(mean_diff), 0.0)
    };
    StatResult {
        t_stat: t,
        df,
        p_two_sided: p,
        reject_at_alpha: p < alpha,
        alpha,
        small_sample: small,
        degenerate_variance: true,
    }
}

fn check_sample(xs: &[f64]) -> Result<(), StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// One-sample t-test of the paired differences against zero mean.
pub fn paired_t_test(diffs: &[f64], alpha: f64) -> Result<StatResult, StatsError> {
    check_alpha(alpha)?;
    check_sample(diffs)?;
    let n = diffs.len();
    let (mean, var) = mean_var(diffs);
    let df = (n - 1) as f64;
    let small = n < MIN_RELIABLE_N;
    if var == 0.0 {
        return Ok(degenerate(mean, df, alpha, small));
    }
    let t = mean / (var / n as f64).sqrt();
    Ok(finish(t, df, alpha, small))
}

/// Two-sample t-test without assuming equal variances, with
/// Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<StatResult, StatsError> {
    check_alpha(alpha)?;
    check_sample(a)?;
    check_sample(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let small = a.len().min(b.len()) < MIN_RELIABLE_N;
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(degenerate(ma - mb, na + nb - 2.0, alpha, small));
    }
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let t = (ma - mb) / se2.sqrt();
    Ok(finish(t, df, alpha, small))
}
