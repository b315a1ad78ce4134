//! The two speed-test client designs.
//!
//! Both engines drive a [`TransportProvider`], which is either the simulated
//! network ([`SimProvider`]) or real sockets. Engines only ever see per-connection
//! byte counters sampled on a fixed 250 ms tick.

mod aggregate;
mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{
    aggregate_discard, resample, AggregateError, AGGREGATE_BUCKETS, DISCARD_HIGH, DISCARD_LOW,
};
pub use sim::SimProvider;

use crate::emulink::LinkError;
use crate::Direction;

pub const SAMPLE_INTERVAL_S: f64 = 0.25;
pub const SINGLE_STREAM_DURATION_S: f64 = 10.0;

/// Index of a connection opened through a provider.
pub type ConnId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EngineKind {
    #[serde(rename = "single")]
    SingleStream,
    #[serde(rename = "adaptive")]
    AdaptiveMulti,
}

impl EngineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EngineKind::SingleStream => "single",
            EngineKind::AdaptiveMulti => "adaptive",
        }
    }
}

impl std::str::FromStr for EngineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "single" | "single-stream" | "ndt" | "ndt7" => Ok(EngineKind::SingleStream),
            "adaptive" | "adaptive-multi" | "multi" | "ookla" => Ok(EngineKind::AdaptiveMulti),
            other => Err(format!("unknown engine '{other}' (expected single|adaptive)")),
        }
    }
}

/// Which byte counter an upload test trusts.
///
/// `SenderApp` counts everything the application handed to its sockets;
/// `ReceiverAcked` counts what the far end confirmed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccountingMode {
    #[serde(rename = "app")]
    SenderApp,
    #[serde(rename = "acked")]
    ReceiverAcked,
}

impl AccountingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AccountingMode::SenderApp => "app",
            AccountingMode::ReceiverAcked => "acked",
        }
    }

    /// Downloads are always measured at the receiver.
    pub fn effective(self, direction: Direction) -> AccountingMode {
        match direction {
            Direction::Down => AccountingMode::ReceiverAcked,
            Direction::Up => self,
        }
    }
}

impl std::str::FromStr for AccountingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "app" | "sender-app" | "appinfo" => Ok(AccountingMode::SenderApp),
            "acked" | "receiver-acked" | "tcpinfo" => Ok(AccountingMode::ReceiverAcked),
            other => Err(format!("unknown accounting mode '{other}' (expected app|acked)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t_offset_s: f64,
    pub bytes_cum: u64,
    pub inst_speed_bits_per_s: f64,
}

/// Counters of one connection at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConnCounters {
    pub sender_app_bytes: u64,
    pub receiver_acked_bytes: u64,
    pub srtt_s: Option<f64>,
}

/// Totals of both counters over all of a test's connections.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteCounters {
    pub sender_app: u64,
    pub receiver_acked: u64,
}

impl ByteCounters {
    pub fn get(&self, mode: AccountingMode) -> u64 {
        match mode {
            AccountingMode::SenderApp => self.sender_app,
            AccountingMode::ReceiverAcked => self.receiver_acked,
        }
    }

    fn sum(counters: &[ConnCounters]) -> Self {
        counters
            .iter()
            .fold(ByteCounters::default(), |acc, c| ByteCounters {
                sender_app: acc.sender_app + c.sender_app_bytes,
                receiver_acked: acc.receiver_acked + c.receiver_acked_bytes,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub engine: EngineKind,
    pub direction: Direction,
    pub reported_bits_per_s: f64,
    pub average_bits_per_s: f64,
    pub duration_s: f64,
    pub samples: Vec<Sample>,
    /// `(t_offset_s, connections)` at start and at every change.
    pub conn_count_trace: Vec<(f64, usize)>,
    pub accounting: AccountingMode,
    /// Final values of both counters, whichever one the report used.
    pub totals: ByteCounters,
}

impl SpeedReport {
    pub fn conn_max(&self) -> usize {
        self.conn_count_trace.iter().map(|&(_, n)| n).max().unwrap_or(0)
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("connect failed: {0}")]
    Connect(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unknown connection {0}")]
    UnknownConnection(ConnId),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("test aborted after {} samples: {source}", partial_samples.len())]
    Aborted {
        source: ProviderError,
        partial_samples: Vec<Sample>,
    },
    #[error("aggregation failed: {0}")]
    Aggregate(#[from] AggregateError),
    #[error("duration must be positive, got {0}")]
    ZeroDuration(f64),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

impl EngineError {
    pub fn partial_samples(&self) -> &[Sample] {
        match self {
            EngineError::Aborted { partial_samples, .. } => partial_samples,
            _ => &[],
        }
    }
}

/// Anything that can open byte-counting connections and move time forward.
pub trait TransportProvider {
    /// Current time in seconds on the provider's clock.
    fn now_s(&self) -> f64;
    /// Open a connection carrying data in `direction`; it starts transferring
    /// as soon as it is established.
    fn open(&mut self, direction: Direction) -> Result<ConnId, ProviderError>;
    /// Let the transfer run until the provider clock reads `t_s`.
    fn advance_to(&mut self, t_s: f64) -> Result<(), ProviderError>;
    /// Counters of the given connections, all taken at the same instant.
    fn snapshot(&mut self, conns: &[ConnId]) -> Result<Vec<ConnCounters>, ProviderError>;
    fn close(&mut self, conn: ConnId);
}

pub fn compute_speed(
    counters: ByteCounters,
    duration_s: f64,
    accounting: AccountingMode,
) -> Result<f64, EngineError> {
    if !(duration_s > 0.0) {
        return Err(EngineError::ZeroDuration(duration_s));
    }
    Ok(counters.get(accounting) as f64 * 8.0 / duration_s)
}

/// Knobs of the adaptive multi-connection engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptivePolicy {
    pub max_conns: usize,
    pub min_s: f64,
    pub max_s: f64,
    pub ramp_interval_s: f64,
    /// Relative growth of the 2-sample moving average that triggers a ramp.
    pub ramp_growth: f64,
    /// Mean smoothed RTT at or above which a connection is added regardless.
    pub ramp_rtt_s: f64,
    pub stable_window: usize,
    /// The stability window also spans at least this many smoothed RTTs.
    pub stable_rtts: f64,
    /// Coefficient of variation below which the test may stop.
    pub stable_cv: f64,
}

impl Default for AdaptivePolicy {
    fn default() -> Self {
        AdaptivePolicy {
            max_conns: 8,
            min_s: 3.5,
            max_s: 16.0,
            ramp_interval_s: 0.75,
            ramp_growth: 0.05,
            ramp_rtt_s: 0.020,
            stable_window: 10,
            stable_rtts: 8.0,
            stable_cv: 0.02,
        }
    }
}

impl AdaptivePolicy {
    /// Earliest stop time: `min_s`, but never before enough samples exist to
    /// fill every aggregation bucket.
    pub fn effective_min_s(&self) -> f64 {
        self.min_s.max(AGGREGATE_BUCKETS as f64 * SAMPLE_INTERVAL_S)
    }

    fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidPolicy(m.to_string()));
        if self.max_conns == 0 {
            return bad("max_conns must be at least 1");
        }
        if !(self.max_s >= self.effective_min_s()) {
            return bad("max_s must be at least the effective minimum duration");
        }
        if !(self.ramp_interval_s >= SAMPLE_INTERVAL_S) {
            return bad("ramp_interval_s must be at least one sample interval");
        }
        if self.stable_window < 2 {
            return bad("stable_window must be at least 2");
        }
        Ok(())
    }
}

/// Sampling loop state shared by both engines.
struct Sampler {
    t0: f64,
    mode: AccountingMode,
    conns: Vec<ConnId>,
    samples: Vec<Sample>,
    last: ConnCounters,
    totals: ByteCounters,
    mean_srtt: Option<f64>,
}

impl Sampler {
    fn start(
        provider: &mut dyn TransportProvider,
        direction: Direction,
        mode: AccountingMode,
    ) -> Result<Self, EngineError> {
        let t0 = provider.now_s();
        let mut s = Sampler {
            t0,
            mode,
            conns: Vec::new(),
            samples: Vec::new(),
            last: ConnCounters::default(),
            totals: ByteCounters::default(),
            mean_srtt: None,
        };
        s.open(provider, direction)?;
        Ok(s)
    }

    fn abort(&self, source: ProviderError) -> EngineError {
        EngineError::Aborted {
            source,
            partial_samples: self.samples.clone(),
        }
    }

    fn open(
        &mut self,
        provider: &mut dyn TransportProvider,
        direction: Direction,
    ) -> Result<(), EngineError> {
        match provider.open(direction) {
            Ok(c) => {
                self.conns.push(c);
                Ok(())
            }
            Err(e) => Err(self.abort(e)),
        }
    }

    /// Advance to sample tick `k` and record it.
    fn tick(&mut self, provider: &mut dyn TransportProvider, k: usize) -> Result<f64, EngineError> {
        let t = k as f64 * SAMPLE_INTERVAL_S;
        if let Err(e) = provider.advance_to(self.t0 + t) {
            return Err(self.abort(e));
        }
        let counters = match provider.snapshot(&self.conns) {
            Ok(c) => c,
            Err(e) => return Err(self.abort(e)),
        };
        let totals = ByteCounters::sum(&counters);
        let rtts: Vec<f64> = counters.iter().filter_map(|c| c.srtt_s).collect();
        self.mean_srtt = if rtts.is_empty() {
            None
        } else {
            Some(rtts.iter().sum::<f64>() / rtts.len() as f64)
        };
        let bytes = totals.get(self.mode);
        let (prev_t, prev_b) = self
            .samples
            .last()
            .map_or((0.0, 0), |s| (s.t_offset_s, s.bytes_cum));
        // Counters never run backwards; guard against a provider that does.
        let bytes = bytes.max(prev_b);
        self.samples.push(Sample {
            t_offset_s: t,
            bytes_cum: bytes,
            inst_speed_bits_per_s: (bytes - prev_b) as f64 * 8.0 / (t - prev_t),
        });
        self.totals = totals;
        self.last = counters.last().copied().unwrap_or_default();
        Ok(t)
    }

    fn close_all(&self, provider: &mut dyn TransportProvider) {
        for &c in &self.conns {
            provider.close(c);
        }
    }
}

/// Fixed 10 s test over one connection; speed = bytes / test time.
pub fn run_single_stream(
    provider: &mut dyn TransportProvider,
    direction: Direction,
    accounting: AccountingMode,
) -> Result<SpeedReport, EngineError> {
    let mode = accounting.effective(direction);
    let mut s = Sampler::start(provider, direction, mode)?;
    let ticks = (SINGLE_STREAM_DURATION_S / SAMPLE_INTERVAL_S).round() as usize;
    let mut result = Ok(());
    for k in 1..=ticks {
        if let Err(e) = s.tick(provider, k) {
            result = Err(e);
            break;
        }
    }
    s.close_all(provider);
    result?;
    let speed = compute_speed(s.totals, SINGLE_STREAM_DURATION_S, mode)?;
    Ok(SpeedReport {
        engine: EngineKind::SingleStream,
        direction,
        reported_bits_per_s: speed,
        average_bits_per_s: speed,
        duration_s: SINGLE_STREAM_DURATION_S,
        samples: s.samples,
        conn_count_trace: vec![(0.0, 1)],
        accounting: mode,
        totals: s.totals,
    })
}

fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return f64::INFINITY;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt() / mean
}

/// Multi-connection test that ramps connections, stops once throughput is
/// stable, and reports a trimmed mean of 20 equal-width buckets.
pub fn run_adaptive_multi(
    provider: &mut dyn TransportProvider,
    direction: Direction,
    accounting: AccountingMode,
    policy: &AdaptivePolicy,
) -> Result<SpeedReport, EngineError> {
    policy.validate()?;
    let mode = accounting.effective(direction);
    let mut s = Sampler::start(provider, direction, mode)?;
    let mut trace = vec![(0.0, 1)];
    let ramp_every = (policy.ramp_interval_s / SAMPLE_INTERVAL_S).round() as usize;
    let max_ticks = (policy.max_s / SAMPLE_INTERVAL_S).floor() as usize;
    let min_t = policy.effective_min_s();
    let mut last_ma: Option<f64> = None;

    let mut outcome = Ok(0.0);
    for k in 1..=max_ticks {
        let t = match s.tick(provider, k) {
            Ok(t) => t,
            Err(e) => {
                outcome = Err(e);
                break;
            }
        };
        outcome = Ok(t);
        let n = s.samples.len();
        let rtt_span = s.mean_srtt.unwrap_or(0.0) * policy.stable_rtts / SAMPLE_INTERVAL_S;
        let span = policy.stable_window.max(rtt_span.ceil() as usize);
        let settled = trace
            .last()
            .is_some_and(|&(at, _)| at <= t - span as f64 * SAMPLE_INTERVAL_S + 1e-9);
        if t + 1e-9 >= min_t && n >= span && settled {
            let window: Vec<f64> = s.samples[n - span..]
                .iter()
                .map(|x| x.inst_speed_bits_per_s)
                .collect();
            if coefficient_of_variation(&window) < policy.stable_cv {
                break;
            }
        }
        if k % ramp_every == 0 && k < max_ticks {
            let ma = (s.samples[n - 1].inst_speed_bits_per_s
                + s.samples[n.saturating_sub(2)].inst_speed_bits_per_s)
                / 2.0;
            let grew = last_ma.is_some_and(|prev| ma > prev * (1.0 + policy.ramp_growth));
            last_ma = Some(ma);
            let slow = s.mean_srtt.is_some_and(|r| r >= policy.ramp_rtt_s);
            if s.conns.len() < policy.max_conns && (grew || slow) {
                if let Err(e) = s.open(provider, direction) {
                    outcome = Err(e);
                    break;
                }
                trace.push((t, s.conns.len()));
            }
        }
    }
    s.close_all(provider);
    let duration = outcome?;
    let buckets = resample(&s.samples, AGGREGATE_BUCKETS)?;
    let reported = aggregate_discard(&buckets)?;
    let average = compute_speed(s.totals, duration, mode)?;
    Ok(SpeedReport {
        engine: EngineKind::AdaptiveMulti,
        direction,
        reported_bits_per_s: reported,
        average_bits_per_s: average,
        duration_s: duration,
        samples: s.samples,
        conn_count_trace: trace,
        accounting: mode,
        totals: s.totals,
    })
}

/// Dispatch on engine kind.
pub fn run_engine(
    kind: EngineKind,
    provider: &mut dyn TransportProvider,
    direction: Direction,
    accounting: AccountingMode,
    policy: &AdaptivePolicy,
) -> Result<SpeedReport, EngineError> {
    match kind {
        EngineKind::SingleStream => run_single_stream(provider, direction, accounting),
        EngineKind::AdaptiveMulti => run_adaptive_multi(provider, direction, accounting, policy),
    }
}
