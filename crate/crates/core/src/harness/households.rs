//! Synthetic households with known ground truth.
//!
//! A household is an access link (capacity, base RTT), a set of test servers
//! each adding its own latency and possibly throttling, and a diurnal
//! schedule of background flows. Every day, at fixed local hours, the
//! household runs an adaptive test against one of its servers (round robin)
//! and then, after an idle gap, a single-stream test against its nearest
//! server. Capacity varies from test to test with Gaussian noise.
//!
//! In "degraded" households the path to the single-stream server carries
//! background flows during the evening peak, so only single-stream results
//! drop at peak. A "slow" server throttles every test that uses it.

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, SecondsFormat};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matrix::{par_map, prepare_provider};
use super::HarnessError;
use crate::emulink::LinkSpec;
use crate::engines::{run_engine, AccountingMode, AdaptivePolicy, EngineKind, SpeedReport};
use crate::stats::records::{is_peak_hour, TestRecord, Timestamp};
use crate::transport::CongestionAlgo;
use crate::Direction;

pub const SINGLE_SERVER_ID: &str = "nearest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub households: usize,
    /// How many households get peak-hour congestion on the single-stream path.
    pub degraded: usize,
    pub days: u32,
    /// Local hours at which a pair of tests runs each day.
    pub test_hours: Vec<u32>,
    /// Servers the adaptive test rotates through.
    pub servers: usize,
    /// Index of a server whose capacity is scaled by `slow_factor`.
    pub slow_server: Option<usize>,
    pub slow_factor: f64,
    pub capacity_mbps: [f64; 2],
    pub rtt_ms: [f64; 2],
    pub server_extra_rtt_ms: [f64; 2],
    /// Standard deviation of the per-test relative capacity noise.
    pub noise_sd: f64,
    pub peak_cross_single: usize,
    pub peak_cross_adaptive: usize,
    pub utc_offset_hours: i32,
    pub start_date: NaiveDate,
    pub idle_gap_s: f64,
    pub direction: Direction,
    pub cca: CongestionAlgo,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            households: 30,
            degraded: 10,
            days: 8,
            test_hours: vec![1, 4, 7, 10, 13, 16, 19, 20, 21, 22],
            servers: 5,
            slow_server: None,
            slow_factor: 0.9,
            capacity_mbps: [8.0, 20.0],
            rtt_ms: [5.0, 25.0],
            server_extra_rtt_ms: [0.0, 10.0],
            noise_sd: 0.03,
            peak_cross_single: 1,
            peak_cross_adaptive: 0,
            utc_offset_hours: -5,
            start_date: NaiveDate::from_ymd_opt(2024, 3, 4).unwrap(),
            idle_gap_s: super::DEFAULT_IDLE_GAP_S,
            direction: Direction::Down,
            cca: CongestionAlgo::BbrModel,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidSpec(m.to_string()));
        if self.households == 0 || self.days == 0 || self.test_hours.is_empty() {
            return bad("households, days and test_hours must be non-empty");
        }
        if self.degraded > self.households {
            return bad("degraded exceeds households");
        }
        if self.servers == 0 || self.slow_server.is_some_and(|s| s >= self.servers) {
            return bad("slow_server must index one of the servers");
        }
        if self.test_hours.iter().any(|&h| h > 23) {
            return bad("test_hours must lie in 0..=23");
        }
        if !(self.slow_factor > 0.0) || !(self.noise_sd >= 0.0) {
            return bad("slow_factor must be positive and noise_sd non-negative");
        }
        if !(self.capacity_mbps[0] > 0.0 && self.capacity_mbps[0] <= self.capacity_mbps[1]) {
            return bad("capacity_mbps must be an increasing positive range");
        }
        if FixedOffset::east_opt(self.utc_offset_hours * 3600).is_none() {
            return bad("utc_offset_hours out of range");
        }
        Ok(())
    }

    pub fn server_id(&self, i: usize) -> String {
        format!("srv{i}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HouseholdTruth {
    pub household_id: String,
    pub capacity_mbps: f64,
    pub base_rtt_ms: f64,
    pub peak_degraded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub records: Vec<TestRecord>,
    pub truth: Vec<HouseholdTruth>,
    pub slow_server_id: Option<String>,
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

struct Household {
    truth: HouseholdTruth,
    seed: u64,
}

/// One test on a fresh link.
fn one_test(
    cfg: &GeneratorConfig,
    engine: EngineKind,
    capacity_bps: f64,
    rtt_ms: f64,
    cross: usize,
    seed: u64,
) -> Result<SpeedReport, HarnessError> {
    let link = LinkSpec::new(capacity_bps, rtt_ms / 1000.0).with_seed(seed);
    let mut p = prepare_provider(link, cfg.cca, cfg.direction, cross, seed)?;
    let policy = AdaptivePolicy::default();
    Ok(run_engine(
        engine,
        &mut p,
        cfg.direction,
        AccountingMode::ReceiverAcked,
        &policy,
    )?)
}

fn run_household(cfg: &GeneratorConfig, hh: &Household) -> Result<Vec<TestRecord>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(hh.seed);
    let tz = FixedOffset::east_opt(cfg.utc_offset_hours * 3600).unwrap();
    let extra: Vec<f64> = (0..cfg.servers)
        .map(|_| uniform(&mut rng, cfg.server_extra_rtt_ms))
        .collect();
    let nearest_extra = uniform(
        &mut rng,
        [cfg.server_extra_rtt_ms[0], cfg.server_extra_rtt_ms[0] + 2.0],
    );
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
    let rotation = rng.random_range(0..cfg.servers);
    let cap = hh.truth.capacity_mbps * 1e6;
    let mut out = Vec::new();
    let mut slot = 0;
    for day in 0..cfg.days {
        for &hour in &cfg.test_hours {
            let minute = rng.random_range(0..30);
            let second = rng.random_range(0..60);
            let local =
                cfg.start_date.and_hms_opt(hour, minute, second).unwrap() + Duration::days(day as i64);
            let start = local.and_local_timezone(tz).single().unwrap();
            let congested = hh.truth.peak_degraded && is_peak_hour(hour);
            let server = (slot + rotation) % cfg.servers;
            slot += 1;
            let factor = if cfg.slow_server == Some(server) {
                cfg.slow_factor
            } else {
                1.0
            };
            let mut jitter = || (1.0 + noise.sample(&mut rng)).clamp(0.5, 1.5);
            let (na, nb) = (jitter(), jitter());
            let (sa, sb): (u64, u64) = (rng.random(), rng.random());

            let a = one_test(
                cfg,
                EngineKind::AdaptiveMulti,
                cap * factor * na,
                hh.truth.base_rtt_ms + extra[server],
                if congested { cfg.peak_cross_adaptive } else { 0 },
                sa,
            )?;
            let b_start =
                start + Duration::milliseconds(((a.duration_s + cfg.idle_gap_s) * 1000.0).round() as i64);
            let b = one_test(
                cfg,
                EngineKind::SingleStream,
                cap * nb,
                hh.truth.base_rtt_ms + nearest_extra,
                if congested { cfg.peak_cross_single } else { 0 },
                sb,
            )?;
            for (report, at, server_id) in [
                (a, start, cfg.server_id(server)),
                (b, b_start, SINGLE_SERVER_ID.to_string()),
            ] {
                out.push(record(
                    &hh.truth.household_id,
                    server_id,
                    at,
                    cfg.direction,
                    &report,
                ));
            }
        }
    }
    Ok(out)
}

fn record(
    hh: &str,
    server_id: String,
    at: DateTime<FixedOffset>,
    direction: Direction,
    r: &SpeedReport,
) -> TestRecord {
    TestRecord {
        household_id: hh.to_string(),
        server_id,
        timestamp: Some(Timestamp::Zoned(at)),
        timestamp_raw: at.to_rfc3339_opts(SecondsFormat::Secs, false),
        direction,
        tool: r.engine,
        speed_bps: r.reported_bits_per_s,
        pair_key: None,
    }
}

/// Generate every household's test history. Deterministic in `cfg.seed`.
pub fn generate(cfg: &GeneratorConfig) -> Result<GeneratedData, HarnessError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut degraded: Vec<bool> = (0..cfg.households).map(|i| i < cfg.degraded).collect();
    degraded.shuffle(&mut rng);
    let width = cfg.households.saturating_sub(1).to_string().len().max(2);
    let households: Vec<Household> = degraded
        .iter()
        .enumerate()
        .map(|(i, &d)| Household {
            truth: HouseholdTruth {
                household_id: format!("hh{i:0width$}"),
                capacity_mbps: uniform(&mut rng, cfg.capacity_mbps),
                base_rtt_ms: uniform(&mut rng, cfg.rtt_ms),
                peak_degraded: d,
            },
            seed: rng.random(),
        })
        .collect();
    let results = par_map(&households, |h| run_household(cfg, h));
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    Ok(GeneratedData {
        records,
        truth: households.into_iter().map(|h| h.truth).collect(),
        slow_server_id: cfg.slow_server.map(|s| cfg.server_id(s)),
    })
}
