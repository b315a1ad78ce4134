//! Congestion-controlled senders running over emulated links.

pub mod bbr;
pub mod cubic;
mod flow;
mod network;

use serde::{Deserialize, Serialize};

pub use flow::DUP_THRESH;
pub use network::SimNetwork;

use crate::emulink::FlowId;

pub const INITIAL_CWND_SEGMENTS: u64 = 10;

/// Send-buffer cap for upload senders: the client application's write
/// granularity bounds how far its byte count can run ahead of the receiver.
pub const DEFAULT_SEND_BUFFER_BYTES: u64 = 1 << 20;

/// Send-buffer cap for download senders (server kernels autotune up to this).
pub const DEFAULT_SERVER_SEND_BUFFER_BYTES: u64 = 4 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CongestionAlgo {
    Cubic,
    #[serde(rename = "bbr")]
    BbrModel,
}

impl CongestionAlgo {
    pub fn as_str(&self) -> &'static str {
        match self {
            CongestionAlgo::Cubic => "cubic",
            CongestionAlgo::BbrModel => "bbr",
        }
    }
}

impl std::str::FromStr for CongestionAlgo {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cubic" => Ok(CongestionAlgo::Cubic),
            "bbr" | "bbrmodel" => Ok(CongestionAlgo::BbrModel),
            other => Err(format!(
                "unknown congestion control '{other}' (expected cubic|bbr)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionConfig {
    pub cca: CongestionAlgo,
    pub send_buffer_bytes: u64,
    pub initial_cwnd_segments: u64,
    /// Per-flow seed; only used to pick BBR's first ProbeBW phase.
    pub seed: u64,
    /// Total bytes the application sends (whole segments); `None` = unbounded.
    pub transfer_bytes: Option<u64>,
}

impl ConnectionConfig {
    pub fn new(cca: CongestionAlgo) -> Self {
        ConnectionConfig {
            cca,
            send_buffer_bytes: DEFAULT_SEND_BUFFER_BYTES,
            initial_cwnd_segments: INITIAL_CWND_SEGMENTS,
            seed: 0,
            transfer_bytes: None,
        }
    }

    pub fn with_send_buffer(mut self, bytes: u64) -> Self {
        self.send_buffer_bytes = bytes;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_transfer_bytes(mut self, bytes: u64) -> Self {
        self.transfer_bytes = Some(bytes);
        self
    }
}

/// Snapshot of one flow's counters.
///
/// `bytes_written_app` counts what the application handed to the transport;
/// `bytes_acked` counts what the receiver has cumulatively acknowledged.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub flow_id: FlowId,
    pub cca: CongestionAlgo,
    pub bytes_written_app: u64,
    pub bytes_acked: u64,
    /// One RTT sample per round trip, seconds.
    pub rtt_samples: Vec<f64>,
    pub srtt_s: Option<f64>,
    pub open_time_s: f64,
    pub cwnd_segments: f64,
    pub retransmits: u64,
}
