//! Ready-made experiment configs, one per figure of the controlled study.

use super::{ExperimentSpec, HarnessError};

pub const CANNED: [(&str, &str); 6] = [
    (
        "fig-capacity-download",
        include_str!("../../../../configs/fig-capacity-download.json"),
    ),
    (
        "fig-latency-download",
        include_str!("../../../../configs/fig-latency-download.json"),
    ),
    (
        "fig-loss-download",
        include_str!("../../../../configs/fig-loss-download.json"),
    ),
    (
        "fig-cubic-loss-upload",
        include_str!("../../../../configs/fig-cubic-loss-upload.json"),
    ),
    (
        "fig-cross-traffic-download",
        include_str!("../../../../configs/fig-cross-traffic-download.json"),
    ),
    (
        "fig-upload-accounting",
        include_str!("../../../../configs/fig-upload-accounting.json"),
    ),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    CANNED.iter().map(|(n, _)| *n)
}

/// Parsed canned config; `None` for an unknown name.
pub fn canned(name: &str) -> Option<Result<ExperimentSpec, HarnessError>> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    CANNED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ExperimentSpec::from_json(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_canned_config_parses_under_its_name() {
        for name in names() {
            let spec = canned(name).unwrap().unwrap();
            assert_eq!(spec.name, name);
            assert_eq!(spec.repetitions, 10);
        }
        assert!(canned("fig-nope").is_none());
    }

    #[test]
    fn latency_figure_covers_the_sweep() {
        let spec = canned("fig-latency-download.json").unwrap().unwrap();
        let mut rtts: Vec<f64> = spec.cells().iter().map(|c| c.rtt_ms).collect();
        rtts.dedup();
        assert_eq!(rtts, [0.0, 50.0, 100.0, 200.0, 400.0, 500.0, 600.0]);
        assert_eq!(spec.cells().len(), 14);
    }
}
