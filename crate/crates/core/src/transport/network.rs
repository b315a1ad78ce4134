use super::flow::Flow;
use super::{bbr::BbrState, cubic::CubicState, Connection, ConnectionConfig};
use crate::emulink::{FlowId, LinkError, LinkEvent, LinkEventKind, LinkSpec, LinkState, Nanos};
use crate::Direction;

/// An access network: a downlink and an uplink bottleneck shared by any
/// number of flows, driven by one virtual clock.
#[derive(Debug, Clone)]
pub struct SimNetwork {
    links: [LinkState; 2],
    flows: Vec<Flow>,
    now: Nanos,
    events: Vec<LinkEvent>,
}

fn link_index(direction: Direction) -> usize {
    match direction {
        Direction::Down => 0,
        Direction::Up => 1,
    }
}

impl SimNetwork {
    pub fn new(down: LinkSpec, up: LinkSpec) -> Result<Self, LinkError> {
        Ok(SimNetwork {
            links: [LinkState::new(down)?, LinkState::new(up)?],
            flows: Vec::new(),
            now: 0,
            events: Vec::new(),
        })
    }

    /// Both directions share one spec (seeds are decorrelated).
    pub fn symmetric(spec: LinkSpec) -> Result<Self, LinkError> {
        let up = spec.clone().with_seed(spec.seed ^ 0x5555_5555_5555_5555);
        Self::new(spec, up)
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn link(&self, direction: Direction) -> &LinkState {
        &self.links[link_index(direction)]
    }

    /// Open a flow whose data travels in `direction`. The handshake takes one
    /// base round trip; the application starts writing once it completes.
    pub fn open(&mut self, direction: Direction, cfg: ConnectionConfig) -> FlowId {
        let idx = link_index(direction);
        let link = &self.links[idx];
        let base_rtt = 2 * link.one_way_delay();
        let id = FlowId(self.flows.len() as u32);
        let mss = link.spec().mss;
        self.flows.push(Flow::new(id, idx, cfg, mss, self.now, base_rtt));
        id
    }

    /// Abort a flow: nothing more is sent and late packets are ignored.
    pub fn close(&mut self, id: FlowId) {
        if let Some(f) = self.flows.get_mut(id.0 as usize) {
            f.close();
        }
    }

    pub fn connection(&self, id: FlowId) -> Option<Connection> {
        self.flows.get(id.0 as usize).map(Flow::snapshot)
    }

    /// `(bytes_written_app, bytes_acked)` without cloning sample history.
    pub fn counters(&self, id: FlowId) -> Option<(u64, u64)> {
        self.flows
            .get(id.0 as usize)
            .map(|f| (f.bytes_written_app(), f.bytes_acked()))
    }

    pub fn srtt_s(&self, id: FlowId) -> Option<f64> {
        self.flows.get(id.0 as usize).and_then(Flow::srtt_s)
    }

    pub fn bbr_state(&self, id: FlowId) -> Option<BbrState> {
        self.flows.get(id.0 as usize).and_then(|f| f.bbr_state().copied())
    }

    pub fn cubic_state(&self, id: FlowId) -> Option<CubicState> {
        self.flows
            .get(id.0 as usize)
            .and_then(|f| f.cubic_state().cloned())
    }

    pub fn flow_count(&self) -> usize {
        self.flows.len()
    }

    fn next_time(&self) -> Option<Nanos> {
        let links = self.links.iter().filter_map(LinkState::next_event_time);
        let flows = self.flows.iter().filter_map(|f| f.next_wakeup(self.now));
        links.chain(flows).min()
    }

    /// Run every flow and both links up to virtual time `until`.
    pub fn run_until(&mut self, until: Nanos) -> Result<(), LinkError> {
        if until < self.now {
            return Err(LinkError::TimeWentBackwards {
                now: until,
                clock: self.now,
            });
        }
        while let Some(t) = self.next_time() {
            if t > until {
                break;
            }
            self.now = t;
            self.step()?;
        }
        self.now = until;
        for link in &mut self.links {
            link.advance_into(until, &mut self.events);
        }
        debug_assert!(self.events.is_empty());
        self.events.clear();
        Ok(())
    }

    fn step(&mut self) -> Result<(), LinkError> {
        let now = self.now;
        for link in &mut self.links {
            link.advance_into(now, &mut self.events);
        }
        for ev in self.events.drain(..) {
            let flow = &mut self.flows[ev.segment.flow_id.0 as usize];
            match ev.kind {
                LinkEventKind::Delivered => flow.on_segment(&ev.segment),
                LinkEventKind::AckDelivered => flow.on_ack(ev.time),
                LinkEventKind::DroppedLoss | LinkEventKind::DroppedQueue => {}
            }
        }
        for flow in &mut self.flows {
            if flow.is_closed() {
                continue;
            }
            flow.on_timer(now);
            flow.try_send(now, &mut self.links[flow.link_index])?;
        }
        Ok(())
    }
}
