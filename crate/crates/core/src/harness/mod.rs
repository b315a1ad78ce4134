//! Experiment orchestration: condition sweeps over the simulated link,
//! back-to-back paired tests, and a synthetic household generator.

pub mod canned;
pub mod households;
mod matrix;
mod paired;
pub mod plot;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matrix::{run_cell_once, run_matrix, CellSummary, MatrixResult, RunRow, ROW_HEADER, SUMMARY_HEADER};
pub use paired::{run_paired, PairedConfig, PairedRecord, DEFAULT_IDLE_GAP_S};

use crate::engines::{AccountingMode, AdaptivePolicy, EngineError, EngineKind};
use crate::transport::CongestionAlgo;
use crate::Direction;

/// Background flows start this long before a test so they are at steady state.
pub const CROSS_WARMUP_S: f64 = 10.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("capacity must be positive, got {0}")]
    NonPositiveCapacity(f64),
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("config: {0}")]
    Parse(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Provider(#[from] crate::engines::ProviderError),
    #[error(transparent)]
    Link(#[from] crate::emulink::LinkError),
}

/// Reported speed over true capacity. Can exceed 1.
pub fn accuracy(reported_bits_per_s: f64, capacity_bits_per_s: f64) -> Result<f64, HarnessError> {
    if !(capacity_bits_per_s > 0.0) {
        return Err(HarnessError::NonPositiveCapacity(capacity_bits_per_s));
    }
    Ok(reported_bits_per_s / capacity_bits_per_s)
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellParams {
    pub capacity_mbps: f64,
    pub rtt_ms: f64,
    pub loss: f64,
    pub cca: CongestionAlgo,
    /// Persistent background flows sharing the bottleneck.
    pub cross: usize,
    pub engine: EngineKind,
    pub direction: Direction,
    pub accounting: AccountingMode,
}

impl Default for CellParams {
    fn default() -> Self {
        CellParams {
            capacity_mbps: 100.0,
            rtt_ms: 10.0,
            loss: 0.0,
            cca: CongestionAlgo::BbrModel,
            cross: 0,
            engine: EngineKind::SingleStream,
            direction: Direction::Down,
            accounting: AccountingMode::ReceiverAcked,
        }
    }
}

impl CellParams {
    pub fn capacity_bps(&self) -> f64 {
        self.capacity_mbps * 1e6
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if !(self.capacity_mbps > 0.0) || !self.capacity_mbps.is_finite() {
            return bad(format!(
                "capacity_mbps must be positive, got {}",
                self.capacity_mbps
            ));
        }
        if !(self.rtt_ms >= 0.0) || !self.rtt_ms.is_finite() {
            return bad(format!("rtt_ms must be non-negative, got {}", self.rtt_ms));
        }
        if !(0.0..1.0).contains(&self.loss) {
            return bad(format!("loss must lie in [0, 1), got {}", self.loss));
        }
        Ok(())
    }
}

/// Values to try per parameter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Axes {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity_mbps: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtt_ms: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cca: Option<Vec<CongestionAlgo>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<Vec<EngineKind>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<Direction>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accounting: Option<Vec<AccountingMode>>,
}

type Setter = Box<dyn Fn(&mut CellParams)>;

impl Axes {
    /// Each listed axis as `(name, setters)`, in a fixed order.
    fn listed(&self) -> Vec<(&'static str, Vec<Setter>)> {
        fn axis<T: Clone + 'static>(
            out: &mut Vec<(&'static str, Vec<Setter>)>,
            name: &'static str,
            values: &Option<Vec<T>>,
            set: fn(&mut CellParams, T),
        ) {
            if let Some(vs) = values {
                let setters = vs
                    .iter()
                    .cloned()
                    .map(|v| Box::new(move |c: &mut CellParams| set(c, v.clone())) as Setter)
                    .collect();
                out.push((name, setters));
            }
        }
        let mut out = Vec::new();
        axis(&mut out, "capacity_mbps", &self.capacity_mbps, |c, v| {
            c.capacity_mbps = v
        });
        axis(&mut out, "rtt_ms", &self.rtt_ms, |c, v| c.rtt_ms = v);
        axis(&mut out, "loss", &self.loss, |c, v| c.loss = v);
        axis(&mut out, "cca", &self.cca, |c, v| c.cca = v);
        axis(&mut out, "cross", &self.cross, |c, v| c.cross = v);
        axis(&mut out, "engine", &self.engine, |c, v| c.engine = v);
        axis(&mut out, "direction", &self.direction, |c, v| c.direction = v);
        axis(&mut out, "accounting", &self.accounting, |c, v| c.accounting = v);
        out
    }
}

/// An experiment: a base cell, axis-aligned sweeps away from it (one
/// parameter at a time), and axes combined with every swept cell.
///
/// ```json
/// {
///   "name": "latency",
///   "repetitions": 10,
///   "base_seed": 1,
///   "base": { "capacity_mbps": 100, "rtt_ms": 10 },
///   "sweep": { "rtt_ms": [0, 50, 100, 200] },
///   "combine": { "engine": ["single", "adaptive"] }
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    #[serde(default)]
    pub base: CellParams,
    #[serde(default)]
    pub sweep: Axes,
    #[serde(default)]
    pub combine: Axes,
    #[serde(default)]
    pub policy: AdaptivePolicy,
}

fn default_repetitions() -> usize {
    10
}

fn default_seed() -> u64 {
    1
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let spec: ExperimentSpec = serde_json::from_str(text)
            .map_err(|e| HarnessError::Parse(format!("line {} column {}: {e}", e.line(), e.column())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.repetitions == 0 {
            return Err(HarnessError::InvalidSpec("repetitions must be at least 1".into()));
        }
        let sweep = self.sweep.listed();
        let combine = self.combine.listed();
        if sweep.is_empty() && combine.is_empty() {
            return Err(HarnessError::InvalidSpec(
                "empty grid: list at least one axis under 'sweep' or 'combine'".into(),
            ));
        }
        for (section, axes) in [("sweep", &sweep), ("combine", &combine)] {
            if let Some((name, _)) = axes.iter().find(|(_, v)| v.is_empty()) {
                return Err(HarnessError::InvalidSpec(format!(
                    "empty grid: {section}.{name} has no values"
                )));
            }
        }
        for c in self.cells() {
            c.validate()?;
        }
        Ok(())
    }

    /// Expanded grid in a stable order, duplicates removed.
    pub fn cells(&self) -> Vec<CellParams> {
        let mut cells: Vec<CellParams> = Vec::new();
        let push = |cells: &mut Vec<CellParams>, c: CellParams| {
            if !cells.contains(&c) {
                cells.push(c);
            }
        };
        let sweep = self.sweep.listed();
        if sweep.is_empty() {
            cells.push(self.base.clone());
        }
        for (_, setters) in &sweep {
            for set in setters {
                let mut c = self.base.clone();
                set(&mut c);
                push(&mut cells, c);
            }
        }
        for (_, setters) in self.combine.listed() {
            let mut next = Vec::new();
            for c in &cells {
                for set in &setters {
                    let mut c = c.clone();
                    set(&mut c);
                    push(&mut next, c);
                }
            }
            cells = next;
        }
        cells
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(95e6, 100e6).unwrap(), 0.95);
        assert!((accuracy(0.67e6, 0.5e6).unwrap() - 1.34).abs() < 1e-12);
        assert_eq!(accuracy(5e6, 5e6).unwrap(), 1.0);
        assert!(accuracy(1.0, 0.0).is_err());
        assert!(accuracy(1.0, -5.0).is_err());
    }

    #[test]
    fn sweep_is_axis_aligned_and_combine_is_a_product() {
        let spec = ExperimentSpec::from_json(
            r#"{ "base": {"rtt_ms": 10, "capacity_mbps": 100},
                 "sweep": {"rtt_ms": [0, 10, 50], "capacity_mbps": [100, 500]},
                 "combine": {"engine": ["single", "adaptive"]} }"#,
        )
        .unwrap();
        let cells = spec.cells();
        // rtt {0,10,50} at 100 Mbps, plus 500 Mbps at 10 ms, times two engines
        assert_eq!(cells.len(), 8);
        assert!(cells.iter().all(|c| c.capacity_mbps == 100.0 || c.rtt_ms == 10.0));
        assert_eq!(spec.repetitions, 10);
    }

    #[test]
    fn empty_grids_are_rejected() {
        for text in [
            r#"{}"#,
            r#"{"sweep": {}}"#,
            r#"{"sweep": {"rtt_ms": []}}"#,
            r#"{"sweep": {"rtt_ms": [1]}, "repetitions": 0}"#,
        ] {
            assert!(
                matches!(ExperimentSpec::from_json(text), Err(HarnessError::InvalidSpec(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn parse_errors_name_the_place() {
        let err = ExperimentSpec::from_json("{\n  \"sweep\": {\"rtt\": [1]}\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("rtt"), "{msg}");
        let err = ExperimentSpec::from_json(r#"{"combine": {"engine": ["iperf"]}}"#).unwrap_err();
        assert!(err.to_string().contains("iperf"));
    }

    #[test]
    fn invalid_cells_are_rejected() {
        assert!(ExperimentSpec::from_json(r#"{"sweep": {"loss": [1.5]}}"#).is_err());
        assert!(ExperimentSpec::from_json(r#"{"sweep": {"capacity_mbps": [0]}}"#).is_err());
    }
}
