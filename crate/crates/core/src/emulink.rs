//! Deterministic model of a single bottleneck link.
//!
//! A link is a rate-limited drop-tail FIFO followed by a fixed propagation
//! delay. Segments are lost i.i.d. with probability `loss_prob` on the forward
//! path before they reach the rate limiter, so lost segments never consume
//! capacity or buffer space. Every delivered segment produces an acknowledgement that
//! travels back over a pure-delay return path (no bandwidth limit, no loss).
//!
//! All time arithmetic is done on integer nanoseconds so that identical inputs
//! always produce bit-identical event streams.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Virtual time in nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_SEC: Nanos = 1_000_000_000;

/// Default segment payload (Ethernet-like MSS).
pub const DEFAULT_MSS: u32 = 1460;

/// Default queue size as a multiple of the bandwidth-delay product.
pub const DEFAULT_QUEUE_BDPS: u64 = 2;

/// Smallest queue a default-sized link gets, in segments. Keeps zero-delay
/// links usable, where the bandwidth-delay product rounds to nothing.
pub const MIN_DEFAULT_QUEUE_SEGMENTS: u64 = 32;

pub fn secs_to_nanos(secs: f64) -> Nanos {
    (secs * NANOS_PER_SEC as f64).round() as Nanos
}

pub fn nanos_to_secs(nanos: Nanos) -> f64 {
    nanos as f64 / NANOS_PER_SEC as f64
}

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("invalid link spec: {field} {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("time went backwards: now {now} ns is before link clock {clock} ns")]
    TimeWentBackwards { now: Nanos, clock: Nanos },
    #[error("segment payload {payload} exceeds mss {mss}")]
    OversizedSegment { payload: u32, mss: u32 },
}

/// Ground-truth description of an emulated bottleneck.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub capacity_bits_per_s: f64,
    pub one_way_delay_s: f64,
    pub loss_prob: f64,
    pub queue_bytes: u64,
    #[serde(default = "default_mss")]
    pub mss: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_mss() -> u32 {
    DEFAULT_MSS
}

/// Bandwidth-delay product in bytes, truncated.
pub fn bdp_bytes(capacity_bits_per_s: f64, rtt_s: f64) -> u64 {
    (capacity_bits_per_s / 8.0 * rtt_s) as u64
}

impl LinkSpec {
    /// A lossless link with the given capacity and round-trip time, and a
    /// queue of [`DEFAULT_QUEUE_BDPS`] bandwidth-delay products.
    pub fn new(capacity_bits_per_s: f64, rtt_s: f64) -> Self {
        let mss = DEFAULT_MSS;
        let queue_bytes = (DEFAULT_QUEUE_BDPS * bdp_bytes(capacity_bits_per_s, rtt_s))
            .max(MIN_DEFAULT_QUEUE_SEGMENTS * mss as u64);
        LinkSpec {
            capacity_bits_per_s,
            one_way_delay_s: rtt_s / 2.0,
            loss_prob: 0.0,
            queue_bytes,
            mss,
            seed: 0,
        }
    }

    pub fn with_loss(mut self, loss_prob: f64) -> Self {
        self.loss_prob = loss_prob;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_queue_bytes(mut self, queue_bytes: u64) -> Self {
        self.queue_bytes = queue_bytes;
        self
    }

    pub fn with_mss(mut self, mss: u32) -> Self {
        self.mss = mss;
        self
    }

    pub fn rtt_s(&self) -> f64 {
        2.0 * self.one_way_delay_s
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |field, reason: &str| {
            Err(LinkError::InvalidSpec {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.capacity_bits_per_s.is_finite() && self.capacity_bits_per_s > 0.0) {
            return bad("capacity_bits_per_s", "must be a positive finite number");
        }
        if !(self.one_way_delay_s.is_finite() && self.one_way_delay_s >= 0.0) {
            return bad("one_way_delay_s", "must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return bad("loss_prob", "must lie in [0, 1]");
        }
        if self.mss == 0 {
            return bad("mss", "must be positive");
        }
        if self.queue_bytes < self.mss as u64 {
            return bad("queue_bytes", "must hold at least one segment");
        }
        Ok(())
    }

    /// Time to clock `bytes` onto the wire, rounded up to whole nanoseconds.
    pub fn serialization_nanos(&self, bytes: u32) -> Nanos {
        let exact = bytes as f64 * 8.0 * NANOS_PER_SEC as f64 / self.capacity_bits_per_s;
        (exact.ceil() as Nanos).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub flow_id: FlowId,
    pub payload_bytes: u32,
    pub seq: u64,
    /// Sender-side transmission counter, opaque to the link. Lets a sender
    /// tell a retransmission apart from the original send of the same `seq`.
    pub xmit: u64,
    pub enqueue_time: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkEventKind {
    Delivered,
    DroppedQueue,
    DroppedLoss,
    AckDelivered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkEvent {
    pub kind: LinkEventKind,
    pub segment: Segment,
    pub time: Nanos,
}

/// Cumulative byte counters. `enqueued = delivered + dropped + in_flight`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub enqueued_bytes: u64,
    pub delivered_bytes: u64,
    pub dropped_queue_bytes: u64,
    pub dropped_loss_bytes: u64,
    pub in_flight_bytes: u64,
    pub enqueued_segments: u64,
    pub delivered_segments: u64,
    pub dropped_queue_segments: u64,
    pub dropped_loss_segments: u64,
}

impl LinkStats {
    pub fn dropped_bytes(&self) -> u64 {
        self.dropped_queue_bytes + self.dropped_loss_bytes
    }
}

#[derive(Debug, Clone, Copy)]
struct Transit {
    segment: Segment,
    arrive: Nanos,
}

#[derive(Debug, Clone)]
pub struct LinkState {
    spec: LinkSpec,
    clock: Nanos,
    rng: ChaCha8Rng,
    one_way: Nanos,
    mss_serialization: Nanos,
    /// Admitted segments still occupying the buffer: (serialization end, bytes).
    backlog: VecDeque<(Nanos, u32)>,
    backlog_bytes: u64,
    busy_until: Nanos,
    transit: VecDeque<Transit>,
    lost: VecDeque<(Segment, Nanos)>,
    acks: VecDeque<(Segment, Nanos)>,
    stats: LinkStats,
}

impl LinkState {
    pub fn new(spec: LinkSpec) -> Result<Self, LinkError> {
        spec.validate()?;
        let one_way = secs_to_nanos(spec.one_way_delay_s);
        let mss_serialization = spec.serialization_nanos(spec.mss);
        Ok(LinkState {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            spec,
            clock: 0,
            one_way,
            mss_serialization,
            backlog: VecDeque::new(),
            backlog_bytes: 0,
            busy_until: 0,
            transit: VecDeque::new(),
            lost: VecDeque::new(),
            acks: VecDeque::new(),
            stats: LinkStats::default(),
        })
    }

    pub fn spec(&self) -> &LinkSpec {
        &self.spec
    }

    pub fn clock(&self) -> Nanos {
        self.clock
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    pub fn queued_bytes(&self) -> u64 {
        self.backlog_bytes
    }

    pub fn one_way_delay(&self) -> Nanos {
        self.one_way
    }

    fn serialization(&self, bytes: u32) -> Nanos {
        if bytes == self.spec.mss {
            self.mss_serialization
        } else {
            self.spec.serialization_nanos(bytes)
        }
    }

    /// Offer a segment to the bottleneck at time `now`. Returns the
    /// `DroppedQueue` event when the buffer cannot take it; admitted segments
    /// surface later through [`LinkState::advance`].
    pub fn enqueue(&mut self, seg: Segment, now: Nanos) -> Result<Option<LinkEvent>, LinkError> {
        if now < self.clock {
            return Err(LinkError::TimeWentBackwards {
                now,
                clock: self.clock,
            });
        }
        if seg.payload_bytes > self.spec.mss || seg.payload_bytes == 0 {
            return Err(LinkError::OversizedSegment {
                payload: seg.payload_bytes,
                mss: self.spec.mss,
            });
        }
        self.clock = now;
        while let Some(&(done, bytes)) = self.backlog.front() {
            if done > now {
                break;
            }
            self.backlog.pop_front();
            self.backlog_bytes -= bytes as u64;
        }

        let segment = Segment {
            enqueue_time: now,
            ..seg
        };
        let bytes = segment.payload_bytes as u64;
        self.stats.enqueued_bytes += bytes;
        self.stats.enqueued_segments += 1;

        if self.spec.loss_prob > 0.0 && self.rng.random::<f64>() < self.spec.loss_prob {
            self.stats.in_flight_bytes += bytes;
            self.lost.push_back((segment, now + self.one_way));
            return Ok(None);
        }

        if self.backlog_bytes + bytes > self.spec.queue_bytes {
            self.stats.dropped_queue_bytes += bytes;
            self.stats.dropped_queue_segments += 1;
            return Ok(Some(LinkEvent {
                kind: LinkEventKind::DroppedQueue,
                segment,
                time: now,
            }));
        }

        let start = self.busy_until.max(now);
        let done = start + self.serialization(segment.payload_bytes);
        self.busy_until = done;
        self.backlog.push_back((done, segment.payload_bytes));
        self.backlog_bytes += bytes;
        self.stats.in_flight_bytes += bytes;
        self.transit.push_back(Transit {
            segment,
            arrive: done + self.one_way,
        });
        Ok(None)
    }

    /// Time of the next pending event, if any.
    pub fn next_event_time(&self) -> Option<Nanos> {
        [
            self.transit.front().map(|t| t.arrive),
            self.lost.front().map(|l| l.1),
            self.acks.front().map(|a| a.1),
        ]
        .into_iter()
        .flatten()
        .min()
    }

    /// Emit every event due at or before `until`, in time order.
    pub fn advance(&mut self, until: Nanos) -> Vec<LinkEvent> {
        let mut out = Vec::new();
        self.advance_into(until, &mut out);
        out
    }

    /// Like [`LinkState::advance`] but appends into a caller-owned buffer.
    pub fn advance_into(&mut self, until: Nanos, out: &mut Vec<LinkEvent>) {
        // Three FIFO streams, each time-ordered; merge them. On ties acks go
        // first (they belong to earlier segments), then losses, then deliveries.
        loop {
            let ack = self.acks.front().map(|a| a.1).filter(|&t| t <= until);
            let lost = self.lost.front().map(|l| l.1).filter(|&t| t <= until);
            let transit = self.transit.front().map(|t| t.arrive).filter(|&t| t <= until);
            let earliest = match [ack, lost, transit].into_iter().flatten().min() {
                Some(t) => t,
                None => break,
            };
            if ack == Some(earliest) {
                let (segment, time) = self.acks.pop_front().unwrap();
                out.push(LinkEvent {
                    kind: LinkEventKind::AckDelivered,
                    segment,
                    time,
                });
            } else if lost == Some(earliest) {
                let (segment, time) = self.lost.pop_front().unwrap();
                let bytes = segment.payload_bytes as u64;
                self.stats.in_flight_bytes -= bytes;
                self.stats.dropped_loss_bytes += bytes;
                self.stats.dropped_loss_segments += 1;
                out.push(LinkEvent {
                    kind: LinkEventKind::DroppedLoss,
                    segment,
                    time,
                });
            } else {
                let t = self.transit.pop_front().unwrap();
                let bytes = t.segment.payload_bytes as u64;
                self.stats.in_flight_bytes -= bytes;
                self.stats.delivered_bytes += bytes;
                self.stats.delivered_segments += 1;
                self.acks.push_back((t.segment, t.arrive + self.one_way));
                out.push(LinkEvent {
                    kind: LinkEventKind::Delivered,
                    segment: t.segment,
                    time: t.arrive,
                });
            }
        }
        self.clock = self.clock.max(until);
    }
}
