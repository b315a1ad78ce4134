use super::{ConnCounters, ConnId, ProviderError, TransportProvider};
use crate::emulink::{nanos_to_secs, secs_to_nanos, FlowId, LinkSpec};
use crate::transport::{
    CongestionAlgo, ConnectionConfig, SimNetwork, DEFAULT_SEND_BUFFER_BYTES, DEFAULT_SERVER_SEND_BUFFER_BYTES,
};
use crate::Direction;

/// Runs engines over a [`SimNetwork`] in virtual time.
///
/// Connections opened through the provider are distinct from any background
/// flows the caller opens directly on [`SimProvider::network_mut`].
#[derive(Debug, Clone)]
pub struct SimProvider {
    net: SimNetwork,
    cca: CongestionAlgo,
    seed: u64,
    upload_buffer: u64,
    download_buffer: u64,
    conns: Vec<FlowId>,
}

impl SimProvider {
    pub fn new(net: SimNetwork, cca: CongestionAlgo, seed: u64) -> Self {
        SimProvider {
            net,
            cca,
            seed,
            upload_buffer: DEFAULT_SEND_BUFFER_BYTES,
            download_buffer: DEFAULT_SERVER_SEND_BUFFER_BYTES,
            conns: Vec::new(),
        }
    }

    /// Same spec in both directions.
    pub fn symmetric(spec: LinkSpec, cca: CongestionAlgo) -> Result<Self, ProviderError> {
        let seed = spec.seed;
        Ok(Self::new(SimNetwork::symmetric(spec)?, cca, seed))
    }

    pub fn with_send_buffers(mut self, upload: u64, download: u64) -> Self {
        self.upload_buffer = upload;
        self.download_buffer = download;
        self
    }

    pub fn network(&self) -> &SimNetwork {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut SimNetwork {
        &mut self.net
    }

    pub fn flow_id(&self, conn: ConnId) -> Option<FlowId> {
        self.conns.get(conn).copied()
    }

    fn config_for(&self, direction: Direction) -> ConnectionConfig {
        let buffer = match direction {
            Direction::Up => self.upload_buffer,
            Direction::Down => self.download_buffer,
        };
        let n = self.net.flow_count() as u64;
        ConnectionConfig::new(self.cca)
            .with_send_buffer(buffer)
            .with_seed(self.seed.wrapping_add(n.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }
}

impl TransportProvider for SimProvider {
    fn now_s(&self) -> f64 {
        nanos_to_secs(self.net.now())
    }

    fn open(&mut self, direction: Direction) -> Result<ConnId, ProviderError> {
        let cfg = self.config_for(direction);
        let id = self.net.open(direction, cfg);
        self.conns.push(id);
        Ok(self.conns.len() - 1)
    }

    fn advance_to(&mut self, t_s: f64) -> Result<(), ProviderError> {
        let target = secs_to_nanos(t_s).max(self.net.now());
        self.net.run_until(target)?;
        Ok(())
    }

    fn snapshot(&mut self, conns: &[ConnId]) -> Result<Vec<ConnCounters>, ProviderError> {
        conns
            .iter()
            .map(|&c| {
                let flow = *self.conns.get(c).ok_or(ProviderError::UnknownConnection(c))?;
                let (written, acked) = self
                    .net
                    .counters(flow)
                    .ok_or(ProviderError::UnknownConnection(c))?;
                Ok(ConnCounters {
                    sender_app_bytes: written,
                    receiver_acked_bytes: acked,
                    srtt_s: self.net.srtt_s(flow),
                })
            })
            .collect()
    }

    fn close(&mut self, conn: ConnId) {
        if let Some(&flow) = self.conns.get(conn) {
            self.net.close(flow);
        }
    }
}
