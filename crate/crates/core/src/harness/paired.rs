use serde::Serialize;

use super::matrix::prepare_provider;
use super::HarnessError;
use crate::emulink::{secs_to_nanos, FlowId, LinkSpec};
use crate::engines::{
    run_engine, AccountingMode, AdaptivePolicy, EngineKind, SpeedReport, TransportProvider,
};
use crate::transport::CongestionAlgo;
use crate::Direction;

pub const DEFAULT_IDLE_GAP_S: f64 = 5.0;

/// Window over which background goodput is measured before each test.
const BACKGROUND_WINDOW_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PairedConfig {
    pub household_id: String,
    pub server_id: String,
    pub direction: Direction,
    pub cca: CongestionAlgo,
    pub accounting: AccountingMode,
    pub policy: AdaptivePolicy,
    /// Engine that runs first.
    pub first: EngineKind,
    pub idle_gap_s: f64,
    pub cross_flows: usize,
}

impl PairedConfig {
    pub fn new(household_id: &str, direction: Direction) -> Self {
        PairedConfig {
            household_id: household_id.to_string(),
            server_id: "sim".to_string(),
            direction,
            cca: CongestionAlgo::BbrModel,
            accounting: AccountingMode::ReceiverAcked,
            policy: AdaptivePolicy::default(),
            first: EngineKind::AdaptiveMulti,
            idle_gap_s: DEFAULT_IDLE_GAP_S,
            cross_flows: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedRecord {
    pub household_id: String,
    pub server_id: String,
    pub direction: Direction,
    /// Virtual start time of each test, seconds.
    pub start_a_s: f64,
    pub start_b_s: f64,
    /// The adaptive engine's report.
    pub report_a: SpeedReport,
    /// The single-stream engine's report.
    pub report_b: SpeedReport,
    pub gap_s: f64,
    pub order: [EngineKind; 2],
    /// Background goodput (bits/s) over the second before each test, in run
    /// order; `None` without background flows or without room to measure.
    pub background_before: [Option<f64>; 2],
    pub warnings: Vec<String>,
}

fn background_bytes(p: &crate::engines::SimProvider, flows: &[FlowId]) -> u64 {
    flows
        .iter()
        .filter_map(|&f| p.network().counters(f))
        .map(|c| c.1)
        .sum()
}

/// Run both engines back to back over one simulated link, separated by an
/// idle gap. Background flows, if any, run throughout.
pub fn run_paired(link: LinkSpec, cfg: &PairedConfig, seed: u64) -> Result<PairedRecord, HarnessError> {
    let mut warnings = Vec::new();
    if cfg.idle_gap_s <= 0.0 {
        warnings.push(format!(
            "idle gap is {} s; background flows cannot recover between tests",
            cfg.idle_gap_s
        ));
    }
    let gap = cfg.idle_gap_s.max(0.0);
    let mut p = prepare_provider(link, cfg.cca, cfg.direction, cfg.cross_flows, seed)?;
    let bg: Vec<FlowId> = (0..cfg.cross_flows as u32).map(FlowId).collect();

    let measure_before =
        |p: &mut crate::engines::SimProvider, start: f64, room: f64| -> Result<Option<f64>, HarnessError> {
            if bg.is_empty() || room < BACKGROUND_WINDOW_S {
                return Ok(None);
            }
            let from = start - BACKGROUND_WINDOW_S;
            let now = p.network().now();
            p.network_mut().run_until(secs_to_nanos(from).max(now))?;
            let before = background_bytes(p, &bg);
            p.network_mut().run_until(secs_to_nanos(start))?;
            Ok(Some(
                (background_bytes(p, &bg) - before) as f64 * 8.0 / BACKGROUND_WINDOW_S,
            ))
        };

    let order = match cfg.first {
        EngineKind::AdaptiveMulti => [EngineKind::AdaptiveMulti, EngineKind::SingleStream],
        EngineKind::SingleStream => [EngineKind::SingleStream, EngineKind::AdaptiveMulti],
    };
    // Background flows under BBR dip in ProbeRTT right around the end of the
    // warmup; skip a second so the baseline window sees steady state.
    let start_first = if bg.is_empty() {
        p.now_s()
    } else {
        p.now_s() + 2.0 * BACKGROUND_WINDOW_S
    };
    let pre_first = measure_before(&mut p, start_first, BACKGROUND_WINDOW_S)?;
    let first = run_engine(order[0], &mut p, cfg.direction, cfg.accounting, &cfg.policy)?;
    let start_second = start_first + first.duration_s + gap;
    let pre_second = measure_before(&mut p, start_second, gap)?;
    p.advance_to(start_second)?;
    let second = run_engine(order[1], &mut p, cfg.direction, cfg.accounting, &cfg.policy)?;

    let (report_a, report_b, start_a_s, start_b_s) = match cfg.first {
        EngineKind::AdaptiveMulti => (first, second, start_first, start_second),
        EngineKind::SingleStream => (second, first, start_second, start_first),
    };
    Ok(PairedRecord {
        household_id: cfg.household_id.clone(),
        server_id: cfg.server_id.clone(),
        direction: cfg.direction,
        start_a_s,
        start_b_s,
        report_a,
        report_b,
        gap_s: gap,
        order,
        background_before: [pre_first, pre_second],
        warnings,
    })
}
