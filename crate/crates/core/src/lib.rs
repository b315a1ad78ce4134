//! Speed-test methodology laboratory.
//!
//! Two throughput-measurement designs (a single-stream fixed-duration test and
//! an adaptive multi-stream test that discards samples) run over either a
//! deterministic emulated bottleneck or real sockets, plus the statistics used
//! to compare paired results from the two.

pub mod emulink;
pub mod engines;
pub mod harness;
pub mod stats;
pub mod transport;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Down,
    Up,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Down => "down",
            Direction::Up => "up",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "down" | "download" | "dl" => Ok(Direction::Down),
            "up" | "upload" | "ul" => Ok(Direction::Up),
            other => Err(format!("unknown direction '{other}' (expected down|up)")),
        }
    }
}
