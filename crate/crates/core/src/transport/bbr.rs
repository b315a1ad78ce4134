//! Simplified BBR state machine: Startup, Drain, the ProbeBW gain cycle and
//! ProbeRTT.
//!
//! Loss never feeds into the model.

pub const STARTUP_GAIN: f64 = 2.885;
pub const DRAIN_GAIN: f64 = 1.0 / 2.885;
pub const PROBE_BW_CWND_GAIN: f64 = 2.0;
pub const PROBE_BW_GAINS: [f64; 8] = [1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
pub const MIN_RTT_WINDOW_S: f64 = 10.0;
pub const BW_WINDOW_ROUNDS: u64 = 10;
/// Window cap while re-measuring min_rtt.
pub const PROBE_RTT_CWND_SEGMENTS: f64 = 4.0;
pub const PROBE_RTT_DURATION_S: f64 = 0.2;
const FULL_BW_GROWTH: f64 = 1.25;
const FULL_BW_ROUNDS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbrPhase {
    Startup,
    Drain,
    ProbeBw,
    ProbeRtt,
}

/// One delivery-rate measurement handed to [`bbr_update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BbrSample {
    pub delivery_rate_bits_per_s: f64,
    pub rtt_s: f64,
    pub now_s: f64,
    /// Whether this sample closes a packet-timed round trip.
    pub round_start: bool,
    /// Segments still unacknowledged after this ack.
    pub inflight_segments: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BbrState {
    pub phase: BbrPhase,
    pub btl_bw_estimate_bits_per_s: f64,
    pub min_rtt_s: f64,
    pub pacing_gain: f64,
    pub cycle_index: usize,
    pub loss_events: u64,
    round_count: u64,
    bw_slots: [(u64, f64); BW_WINDOW_ROUNDS as usize],
    full_bw: f64,
    full_bw_count: u32,
    filled_pipe: bool,
    min_rtt_stamp_s: Option<f64>,
    probe_rtt_done_s: Option<f64>,
    probe_rtt_round_done: bool,
    /// Samples below the estimate are ignored until this round (they were
    /// sent under the ProbeRTT window cap).
    app_limited_until_round: u64,
    phase_stamp_s: f64,
    first_cycle_index: usize,
}

impl BbrState {
    /// `initial_rtt_s` (the handshake estimate) stands in for min_rtt until
    /// the first data RTT sample replaces it.
    ///
    /// `first_cycle_index` is the ProbeBW phase entered after Drain; it is
    /// normally drawn per flow to keep competing flows out of lockstep.
    pub fn new(initial_rtt_s: f64, first_cycle_index: usize) -> Self {
        BbrState {
            phase: BbrPhase::Startup,
            btl_bw_estimate_bits_per_s: 0.0,
            min_rtt_s: initial_rtt_s,
            pacing_gain: STARTUP_GAIN,
            cycle_index: 0,
            loss_events: 0,
            round_count: 0,
            bw_slots: [(0, 0.0); BW_WINDOW_ROUNDS as usize],
            full_bw: 0.0,
            full_bw_count: 0,
            filled_pipe: false,
            min_rtt_stamp_s: None,
            probe_rtt_done_s: None,
            probe_rtt_round_done: false,
            app_limited_until_round: 0,
            phase_stamp_s: 0.0,
            first_cycle_index: first_cycle_index % PROBE_BW_GAINS.len(),
        }
    }

    pub fn cwnd_gain(&self) -> f64 {
        match self.phase {
            BbrPhase::Startup | BbrPhase::Drain => STARTUP_GAIN,
            BbrPhase::ProbeBw | BbrPhase::ProbeRtt => PROBE_BW_CWND_GAIN,
        }
    }

    /// Hard window limit imposed by the current phase, in segments.
    pub fn cwnd_cap_segments(&self) -> Option<f64> {
        (self.phase == BbrPhase::ProbeRtt).then_some(PROBE_RTT_CWND_SEGMENTS)
    }

    pub fn filled_pipe(&self) -> bool {
        self.filled_pipe
    }

    pub fn round_count(&self) -> u64 {
        self.round_count
    }

    /// Estimated bandwidth-delay product in bytes.
    pub fn bdp_bytes(&self) -> f64 {
        self.btl_bw_estimate_bits_per_s / 8.0 * self.min_rtt_s
    }

    /// Record a loss. Only the counter moves.
    pub fn on_loss(&self) -> BbrState {
        BbrState {
            loss_events: self.loss_events + 1,
            ..*self
        }
    }

    fn enter_probe_bw(&mut self, now_s: f64) {
        self.phase = BbrPhase::ProbeBw;
        self.cycle_index = self.first_cycle_index;
        self.pacing_gain = PROBE_BW_GAINS[self.cycle_index];
        self.phase_stamp_s = now_s;
    }

    fn update_min_rtt(&mut self, sample: &BbrSample) {
        let now = sample.now_s;
        let expired = self
            .min_rtt_stamp_s
            .is_some_and(|stamp| now > stamp + MIN_RTT_WINDOW_S);
        if sample.rtt_s > 0.0 && (self.min_rtt_stamp_s.is_none() || sample.rtt_s <= self.min_rtt_s || expired)
        {
            self.min_rtt_s = sample.rtt_s;
            self.min_rtt_stamp_s = Some(now);
        }
        if expired && self.phase != BbrPhase::ProbeRtt {
            self.phase = BbrPhase::ProbeRtt;
            self.pacing_gain = 1.0;
            self.probe_rtt_done_s = None;
        }
        if self.phase != BbrPhase::ProbeRtt {
            return;
        }
        match self.probe_rtt_done_s {
            None if sample.inflight_segments as f64 <= PROBE_RTT_CWND_SEGMENTS => {
                self.probe_rtt_done_s = Some(now + PROBE_RTT_DURATION_S.max(self.min_rtt_s));
                self.probe_rtt_round_done = false;
            }
            None => {}
            Some(done) => {
                if sample.round_start {
                    self.probe_rtt_round_done = true;
                }
                if self.probe_rtt_round_done && now >= done {
                    self.min_rtt_stamp_s = Some(now);
                    self.app_limited_until_round = self.round_count + 1;
                    if self.filled_pipe {
                        self.enter_probe_bw(now);
                    } else {
                        self.phase = BbrPhase::Startup;
                        self.pacing_gain = STARTUP_GAIN;
                    }
                }
            }
        }
    }
}

/// Advance the model by one delivery-rate sample.
pub fn bbr_update(state: &BbrState, sample: BbrSample) -> BbrState {
    let mut s = *state;
    let now = sample.now_s;

    // The bandwidth filter's clock stops while the window is capped, so
    // ProbeRTT neither feeds it low samples nor ages out its maximum.
    let capped = s.phase == BbrPhase::ProbeRtt;
    if sample.round_start && !capped {
        s.round_count += 1;
    }
    let app_limited = capped || s.round_count <= s.app_limited_until_round;
    if sample.delivery_rate_bits_per_s > 0.0
        && (!app_limited || sample.delivery_rate_bits_per_s >= s.btl_bw_estimate_bits_per_s)
    {
        let slot = &mut s.bw_slots[(s.round_count % BW_WINDOW_ROUNDS) as usize];
        if slot.0 == s.round_count {
            slot.1 = slot.1.max(sample.delivery_rate_bits_per_s);
        } else {
            *slot = (s.round_count, sample.delivery_rate_bits_per_s);
        }
    }
    let oldest = s.round_count.saturating_sub(BW_WINDOW_ROUNDS - 1);
    s.btl_bw_estimate_bits_per_s = s
        .bw_slots
        .iter()
        .filter(|(round, _)| *round >= oldest && *round <= s.round_count)
        .map(|(_, bw)| *bw)
        .fold(0.0, f64::max);

    match s.phase {
        BbrPhase::Startup => {
            if sample.round_start {
                if s.btl_bw_estimate_bits_per_s >= s.full_bw * FULL_BW_GROWTH {
                    s.full_bw = s.btl_bw_estimate_bits_per_s;
                    s.full_bw_count = 0;
                } else {
                    s.full_bw_count += 1;
                }
                if s.full_bw_count >= FULL_BW_ROUNDS {
                    s.filled_pipe = true;
                    s.phase = BbrPhase::Drain;
                    s.pacing_gain = DRAIN_GAIN;
                    s.phase_stamp_s = now;
                }
            }
        }
        BbrPhase::Drain => {
            if now - s.phase_stamp_s >= s.min_rtt_s {
                s.enter_probe_bw(now);
            }
        }
        BbrPhase::ProbeBw => {
            if now - s.phase_stamp_s >= s.min_rtt_s {
                s.cycle_index = (s.cycle_index + 1) % PROBE_BW_GAINS.len();
                s.pacing_gain = PROBE_BW_GAINS[s.cycle_index];
                s.phase_stamp_s = now;
            }
        }
        BbrPhase::ProbeRtt => {}
    }
    s.update_min_rtt(&sample);
    s
}
