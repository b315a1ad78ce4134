//! Sender and receiver halves of one simulated flow.

use std::collections::VecDeque;

use super::bbr::{bbr_update, BbrPhase, BbrSample, BbrState, STARTUP_GAIN};
use super::cubic::CubicState;
use super::{CongestionAlgo, Connection, ConnectionConfig};
use crate::emulink::{nanos_to_secs, FlowId, LinkError, LinkState, Nanos, Segment, NANOS_PER_SEC};

/// A transmission is declared lost once this many later transmissions of the
/// same flow have been acknowledged.
pub const DUP_THRESH: u64 = 3;

const MIN_RTO: Nanos = 200_000_000;
const MIN_BBR_CWND: f64 = 4.0;

#[derive(Debug, Clone, Copy)]
struct Outstanding {
    seq: u64,
    sent_at: Nanos,
    delivered_at_send: u64,
    delivered_time_at_send: Nanos,
    first_sent_at_send: Nanos,
    acked: bool,
}

/// What the receiver reports back for one arriving segment.
#[derive(Debug, Clone, Copy)]
struct Ack {
    cum_seq: u64,
    echo_xmit: u64,
}

#[derive(Debug, Clone)]
enum Controller {
    Cubic(CubicState),
    Bbr {
        model: BbrState,
        cwnd: f64,
        /// Window to restore after ProbeRTT.
        prior_cwnd: f64,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Flow {
    pub id: FlowId,
    pub link_index: usize,
    cfg: ConnectionConfig,
    mss: u32,
    cc: Controller,
    open_at: Nanos,
    ready_at: Nanos,
    closed: bool,

    written_app: u64,
    snd_una: u64,
    next_seq: u64,
    next_xmit: u64,
    out: VecDeque<Outstanding>,
    out_base: u64,
    max_acked_xmit: Option<u64>,
    retx: VecDeque<u64>,
    inflight: u64,
    delivered: u64,
    delivered_time: Nanos,
    /// Send time of the most recently delivered transmission.
    first_sent_time: Nanos,
    next_round_delivered: u64,
    next_send_at: Nanos,
    last_progress: Nanos,
    recovery_point: Option<u64>,
    srtt: Option<f64>,
    rtt_samples: Vec<f64>,
    retransmits: u64,

    rcv_next: u64,
    rcv_ooo: VecDeque<bool>,
    pending_acks: VecDeque<Ack>,
}

impl Flow {
    pub fn new(
        id: FlowId,
        link_index: usize,
        cfg: ConnectionConfig,
        mss: u32,
        now: Nanos,
        base_rtt: Nanos,
    ) -> Self {
        let initial_rtt_s = nanos_to_secs(base_rtt.max(1));
        let cc = match cfg.cca {
            CongestionAlgo::Cubic => Controller::Cubic(CubicState::new(cfg.initial_cwnd_segments as f64)),
            CongestionAlgo::BbrModel => Controller::Bbr {
                model: BbrState::new(initial_rtt_s, first_cycle_index(cfg.seed, id)),
                cwnd: cfg.initial_cwnd_segments as f64,
                prior_cwnd: 0.0,
            },
        };
        let ready_at = now + base_rtt;
        Flow {
            id,
            link_index,
            mss,
            cc,
            open_at: now,
            ready_at,
            closed: false,
            written_app: 0,
            snd_una: 0,
            next_seq: 0,
            next_xmit: 0,
            out: VecDeque::new(),
            out_base: 0,
            max_acked_xmit: None,
            retx: VecDeque::new(),
            inflight: 0,
            delivered: 0,
            delivered_time: ready_at,
            first_sent_time: ready_at,
            next_round_delivered: 0,
            next_send_at: ready_at,
            last_progress: ready_at,
            recovery_point: None,
            srtt: Some(initial_rtt_s),
            rtt_samples: Vec::new(),
            retransmits: 0,
            rcv_next: 0,
            rcv_ooo: VecDeque::new(),
            pending_acks: VecDeque::new(),
            cfg,
        }
    }

    pub fn close(&mut self) {
        self.closed = true;
        self.retx.clear();
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn snapshot(&self) -> Connection {
        Connection {
            flow_id: self.id,
            cca: self.cfg.cca,
            bytes_written_app: self.written_app,
            bytes_acked: self.rcv_next * self.mss as u64,
            rtt_samples: self.rtt_samples.clone(),
            srtt_s: self.srtt,
            open_time_s: nanos_to_secs(self.open_at),
            cwnd_segments: self.cwnd(),
            retransmits: self.retransmits,
        }
    }

    pub fn srtt_s(&self) -> Option<f64> {
        self.srtt
    }

    pub fn bytes_acked(&self) -> u64 {
        self.rcv_next * self.mss as u64
    }

    pub fn bytes_written_app(&self) -> u64 {
        self.written_app
    }

    pub fn bbr_state(&self) -> Option<&BbrState> {
        match &self.cc {
            Controller::Bbr { model, .. } => Some(model),
            Controller::Cubic(_) => None,
        }
    }

    pub fn cubic_state(&self) -> Option<&CubicState> {
        match &self.cc {
            Controller::Cubic(s) => Some(s),
            Controller::Bbr { .. } => None,
        }
    }

    fn cwnd(&self) -> f64 {
        match &self.cc {
            Controller::Cubic(s) => s.cwnd_segments,
            Controller::Bbr { cwnd, .. } => *cwnd,
        }
    }

    fn pacing_rate(&self) -> Option<f64> {
        match &self.cc {
            Controller::Cubic(_) => None,
            Controller::Bbr { model, .. } => {
                let rate = if model.btl_bw_estimate_bits_per_s > 0.0 {
                    model.pacing_gain * model.btl_bw_estimate_bits_per_s
                } else {
                    let rtt = self.srtt.unwrap_or(model.min_rtt_s).max(1e-4);
                    STARTUP_GAIN * self.cfg.initial_cwnd_segments as f64 * self.mss as f64 * 8.0 / rtt
                };
                Some(rate)
            }
        }
    }

    fn rto(&self) -> Nanos {
        let srtt = self.srtt.unwrap_or(0.0);
        ((2.0 * srtt * NANOS_PER_SEC as f64) as Nanos).max(MIN_RTO)
    }

    /// Bytes the application wants written: a full send buffer ahead of the
    /// cumulative ack, never past the end of a finite transfer.
    fn app_target(&self) -> u64 {
        let mss = self.mss as u64;
        let full = self.snd_una * mss + self.cfg.send_buffer_bytes;
        match self.cfg.transfer_bytes {
            Some(total) => full.min(total / mss * mss),
            None => full,
        }
    }

    /// The application keeps the send buffer topped up once connected.
    fn refill_app(&mut self, now: Nanos) {
        if self.closed || now < self.ready_at {
            return;
        }
        let limit = self.app_target();
        if limit > self.written_app {
            self.written_app = limit;
        }
    }

    fn sendable_limit(&self) -> u64 {
        self.written_app / self.mss as u64
    }

    /// Whether anything is queued to send, counting what the application
    /// will write on its next refill.
    fn has_data(&self) -> bool {
        let refilled = self.app_target().max(self.written_app) / self.mss as u64;
        !self.retx.is_empty() || self.next_seq < refilled
    }

    fn window_open(&self) -> bool {
        (self.inflight as f64) < self.cwnd().max(1.0).floor()
    }

    /// Earliest time this flow wants to run, if any.
    pub fn next_wakeup(&self, now: Nanos) -> Option<Nanos> {
        if self.closed {
            return None;
        }
        let mut wake: Option<Nanos> = None;
        if now < self.ready_at {
            wake = Some(self.ready_at);
        } else if self.has_data() && self.window_open() {
            let at = if self.pacing_rate().is_some() {
                self.next_send_at.max(now)
            } else {
                now
            };
            wake = Some(at);
        }
        if self.inflight > 0 {
            let deadline = self.last_progress + self.rto();
            wake = Some(wake.map_or(deadline, |w| w.min(deadline)));
        }
        wake
    }

    pub fn on_timer(&mut self, now: Nanos) {
        if self.closed || self.inflight == 0 || now < self.last_progress + self.rto() {
            return;
        }
        // Retransmission timeout: everything still outstanding is presumed lost.
        while let Some(o) = self.out.pop_front() {
            if !o.acked && o.seq >= self.snd_una {
                self.retx.push_back(o.seq);
            }
        }
        self.out_base = self.next_xmit;
        self.inflight = 0;
        self.last_progress = now;
        self.congestion_event(now, true);
    }

    pub fn try_send(&mut self, now: Nanos, link: &mut LinkState) -> Result<(), LinkError> {
        if self.closed || now < self.ready_at {
            return Ok(());
        }
        self.refill_app(now);
        loop {
            if !self.window_open() {
                break;
            }
            while matches!(self.retx.front(), Some(&s) if s < self.snd_una) {
                self.retx.pop_front();
            }
            // Retransmissions go out as soon as the window allows; only new
            // data is paced.
            let is_retx = !self.retx.is_empty();
            let pacing = if is_retx { None } else { self.pacing_rate() };
            if pacing.is_some() && now < self.next_send_at {
                break;
            }
            let seq = loop {
                match self.retx.front().copied() {
                    Some(s) if s < self.snd_una => {
                        self.retx.pop_front();
                    }
                    Some(s) => {
                        self.retx.pop_front();
                        self.retransmits += 1;
                        break Some(s);
                    }
                    None if self.next_seq < self.sendable_limit() => {
                        self.next_seq += 1;
                        break Some(self.next_seq - 1);
                    }
                    None => break None,
                }
            };
            let Some(seq) = seq else { break };

            if self.inflight == 0 {
                self.last_progress = now;
                self.delivered_time = self.delivered_time.max(now);
                self.first_sent_time = now;
            }
            let xmit = self.next_xmit;
            self.next_xmit += 1;
            if self.out.is_empty() {
                self.out_base = xmit;
            }
            self.out.push_back(Outstanding {
                seq,
                sent_at: now,
                delivered_at_send: self.delivered,
                delivered_time_at_send: self.delivered_time,
                first_sent_at_send: self.first_sent_time,
                acked: false,
            });
            self.inflight += 1;
            link.enqueue(
                Segment {
                    flow_id: self.id,
                    payload_bytes: self.mss,
                    seq,
                    xmit,
                    enqueue_time: now,
                },
                now,
            )?;
            if let Some(rate) = pacing {
                let gap = (self.mss as f64 * 8.0 / rate * NANOS_PER_SEC as f64) as Nanos;
                self.next_send_at = self.next_send_at.max(now) + gap.max(1);
            }
        }
        Ok(())
    }

    /// Receiver side: a data segment arrived.
    pub fn on_segment(&mut self, seg: &Segment) {
        if seg.seq == self.rcv_next {
            self.rcv_next += 1;
            while let Some(true) = self.rcv_ooo.front().copied() {
                self.rcv_ooo.pop_front();
                self.rcv_next += 1;
            }
            self.rcv_ooo.pop_front();
        } else if seg.seq > self.rcv_next {
            let idx = (seg.seq - self.rcv_next - 1) as usize;
            if idx >= self.rcv_ooo.len() {
                self.rcv_ooo.resize(idx + 1, false);
            }
            self.rcv_ooo[idx] = true;
        }
        self.pending_acks.push_back(Ack {
            cum_seq: self.rcv_next,
            echo_xmit: seg.xmit,
        });
    }

    /// Sender side: the acknowledgement for an earlier delivery arrived.
    pub fn on_ack(&mut self, now: Nanos) {
        let Some(ack) = self.pending_acks.pop_front() else {
            return;
        };
        if self.closed {
            return;
        }

        let mut newly_acked = 0;
        let mut sample = None;
        if ack.echo_xmit >= self.out_base {
            let idx = (ack.echo_xmit - self.out_base) as usize;
            if let Some(o) = self.out.get_mut(idx) {
                if !o.acked {
                    o.acked = true;
                    let o = *o;
                    self.inflight -= 1;
                    self.delivered += 1;
                    self.delivered_time = now;
                    newly_acked = 1;
                    self.max_acked_xmit = Some(
                        self.max_acked_xmit
                            .map_or(ack.echo_xmit, |m| m.max(ack.echo_xmit)),
                    );
                    let rtt = nanos_to_secs(now - o.sent_at);
                    self.srtt = Some(match self.srtt {
                        Some(s) => 0.875 * s + 0.125 * rtt,
                        None => rtt,
                    });
                    self.first_sent_time = o.sent_at;
                    // The longer of the send and ack spans, so ack
                    // compression cannot inflate the sample.
                    let interval = now
                        .saturating_sub(o.delivered_time_at_send)
                        .max(o.sent_at.saturating_sub(o.first_sent_at_send));
                    let rate = if interval > 0 {
                        (self.delivered - o.delivered_at_send) as f64 * self.mss as f64 * 8.0
                            / nanos_to_secs(interval)
                    } else {
                        0.0
                    };
                    let round_start = o.delivered_at_send >= self.next_round_delivered;
                    if round_start {
                        self.next_round_delivered = self.delivered;
                        self.rtt_samples.push(rtt);
                    }
                    sample = Some(BbrSample {
                        delivery_rate_bits_per_s: rate,
                        rtt_s: rtt,
                        now_s: nanos_to_secs(now),
                        round_start,
                        inflight_segments: self.inflight,
                    });
                }
            }
        }

        // Pop settled transmissions; anything passed by DUP_THRESH acked
        // transmissions is lost.
        let mut lost_new_data = false;
        while let Some(front) = self.out.front() {
            if front.acked {
                self.out.pop_front();
                self.out_base += 1;
                continue;
            }
            match self.max_acked_xmit {
                Some(m) if self.out_base + DUP_THRESH <= m => {
                    let o = self.out.pop_front().unwrap();
                    self.out_base += 1;
                    self.inflight -= 1;
                    if o.seq >= self.snd_una {
                        self.retx.push_back(o.seq);
                        if self.recovery_point.is_none_or(|rp| o.seq >= rp) {
                            lost_new_data = true;
                        }
                    }
                }
                _ => break,
            }
        }

        if ack.cum_seq > self.snd_una {
            self.snd_una = ack.cum_seq;
            self.refill_app(now);
        }
        if newly_acked > 0 || lost_new_data {
            self.last_progress = now;
        }
        if let Some(rp) = self.recovery_point {
            if self.snd_una >= rp {
                self.recovery_point = None;
            }
        }
        if lost_new_data {
            self.congestion_event(now, false);
        }

        let in_recovery = self.recovery_point.is_some();
        let delivered = self.delivered;
        let initial_cwnd = self.cfg.initial_cwnd_segments;
        let mss = self.mss as f64;
        match &mut self.cc {
            Controller::Cubic(state) => {
                if !in_recovery {
                    let rtt = sample.map_or(0.0, |s| s.rtt_s);
                    state.on_ack(newly_acked, nanos_to_secs(now), rtt);
                }
            }
            Controller::Bbr {
                model,
                cwnd,
                prior_cwnd,
            } => {
                let was_probing_rtt = model.phase == BbrPhase::ProbeRtt;
                if let Some(s) = sample {
                    *model = bbr_update(model, s);
                }
                let probing_rtt = model.phase == BbrPhase::ProbeRtt;
                if probing_rtt && !was_probing_rtt {
                    *prior_cwnd = *cwnd;
                } else if was_probing_rtt && !probing_rtt {
                    *cwnd = cwnd.max(*prior_cwnd);
                }
                let target = (model.cwnd_gain() * model.bdp_bytes() / mss).max(MIN_BBR_CWND);
                if model.filled_pipe() {
                    *cwnd = (*cwnd + newly_acked as f64).min(target);
                } else if *cwnd < target || delivered < initial_cwnd {
                    *cwnd += newly_acked as f64;
                }
                if let Some(cap) = model.cwnd_cap_segments() {
                    *cwnd = cwnd.min(cap);
                }
                *cwnd = cwnd.max(MIN_BBR_CWND);
            }
        }
    }

    fn congestion_event(&mut self, _now: Nanos, timeout: bool) {
        self.recovery_point = Some(self.next_seq);
        match &mut self.cc {
            Controller::Cubic(state) => state.on_loss(),
            Controller::Bbr { model, cwnd, .. } => {
                *model = model.on_loss();
                if timeout {
                    *cwnd = MIN_BBR_CWND.max(*cwnd / 2.0);
                }
            }
        }
    }
}

fn first_cycle_index(seed: u64, id: FlowId) -> usize {
    // splitmix64 over (seed, flow); index 1 (the drain phase) is skipped.
    let mut z = seed ^ (id.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let idx = (z % 7) as usize;
    if idx == 0 {
        0
    } else {
        idx + 1
    }
}
