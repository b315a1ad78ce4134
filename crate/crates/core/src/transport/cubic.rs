//! CUBIC window growth.

use thiserror::Error;

pub const BETA_CUBIC: f64 = 0.7;
pub const C_CUBIC: f64 = 0.4;

#[derive(Debug, Error, PartialEq)]
pub enum CubicError {
    #[error("w_max must be positive, got {0}")]
    NonPositiveWmax(f64),
    #[error("time since loss must be non-negative, got {0}")]
    NegativeTime(f64),
}

/// The CUBIC window law `C·(t−K)³ + W_max` with `K = ∛(W_max·(1−β)/C)`.
///
/// Windows are in segments and `t_since_loss` in seconds.
pub fn cubic_window(w_max: f64, t_since_loss: f64, beta: f64, c_cubic: f64) -> Result<f64, CubicError> {
    if !(w_max > 0.0) {
        return Err(CubicError::NonPositiveWmax(w_max));
    }
    if !(t_since_loss >= 0.0) {
        return Err(CubicError::NegativeTime(t_since_loss));
    }
    let k = cubic_k(w_max, beta, c_cubic);
    Ok(c_cubic * (t_since_loss - k).powi(3) + w_max)
}

pub fn cubic_k(w_max: f64, beta: f64, c_cubic: f64) -> f64 {
    (w_max * (1.0 - beta) / c_cubic).cbrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicState {
    pub w_max_segments: f64,
    pub cwnd_segments: f64,
    /// Start of the current congestion-avoidance epoch, seconds.
    pub epoch_start_s: Option<f64>,
    pub in_slow_start: bool,
    pub ssthresh_segments: f64,
    /// Reno-friendly window estimate for the current epoch.
    w_est: f64,
    /// Plateau the cubic curve heads for; below `w_max` under fast convergence.
    origin: f64,
    k: f64,
}

impl CubicState {
    pub fn new(initial_cwnd: f64) -> Self {
        CubicState {
            w_max_segments: initial_cwnd,
            cwnd_segments: initial_cwnd,
            epoch_start_s: None,
            in_slow_start: true,
            ssthresh_segments: f64::INFINITY,
            w_est: initial_cwnd,
            origin: initial_cwnd,
            k: 0.0,
        }
    }

    /// Grow the window for `acked` newly delivered segments.
    pub fn on_ack(&mut self, acked: u64, now_s: f64, rtt_s: f64) {
        if acked == 0 {
            return;
        }
        let n = acked as f64;
        if self.cwnd_segments < self.ssthresh_segments {
            self.in_slow_start = true;
            self.cwnd_segments += n;
            return;
        }
        self.in_slow_start = false;
        let epoch = match self.epoch_start_s {
            Some(e) => e,
            None => {
                self.w_est = self.cwnd_segments;
                if self.cwnd_segments < self.origin {
                    self.k = ((self.origin - self.cwnd_segments) / C_CUBIC).cbrt();
                } else {
                    self.k = 0.0;
                    self.origin = self.cwnd_segments;
                }
                self.epoch_start_s = Some(now_s);
                now_s
            }
        };
        let t = (now_s - epoch + rtt_s).max(0.0);
        let target = (self.origin + C_CUBIC * (t - self.k).powi(3)).min(1.5 * self.cwnd_segments);
        if target > self.cwnd_segments {
            self.cwnd_segments += (target - self.cwnd_segments) / self.cwnd_segments * n;
        } else {
            self.cwnd_segments += 0.01 * n / self.cwnd_segments;
        }
        let alpha = 3.0 * (1.0 - BETA_CUBIC) / (1.0 + BETA_CUBIC);
        self.w_est += alpha * n / self.cwnd_segments;
        if self.w_est > self.cwnd_segments {
            self.cwnd_segments = self.w_est;
        }
    }

    /// Multiplicative decrease. Afterwards `cwnd = β·w_max`.
    ///
    /// With fast convergence, a flow that lost again before regaining its
    /// previous maximum aims its next plateau lower, releasing bandwidth to
    /// newer flows.
    pub fn on_loss(&mut self) {
        let w = self.cwnd_segments.max(2.0);
        self.origin = if w < self.w_max_segments {
            w * (1.0 + BETA_CUBIC) / 2.0
        } else {
            w
        };
        self.w_max_segments = w;
        self.cwnd_segments = BETA_CUBIC * self.w_max_segments;
        self.ssthresh_segments = self.cwnd_segments;
        self.epoch_start_s = None;
        self.in_slow_start = false;
    }
}
