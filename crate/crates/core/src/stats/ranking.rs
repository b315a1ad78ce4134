//! Per-household server ranking by median normalized speed.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::records::{by_household, TestRecord};
use super::{median, nominal_speed, StatsError};
use crate::engines::EngineKind;
use crate::Direction;

pub const DEFAULT_MIN_SERVER_TESTS: usize = 10;
pub const BOTTOM_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServerScore {
    pub server_id: String,
    pub median_normalized: f64,
    pub tests: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HouseholdRanking {
    pub household_id: String,
    pub direction: Direction,
    /// Qualifying servers, best first.
    pub ranked: Vec<ServerScore>,
    /// Best minus worst median; only with at least two qualifying servers.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BottomShare {
    pub server_id: String,
    pub direction: Direction,
    pub bottom_households: usize,
    /// Households where the server qualifies and at least three servers do.
    pub eligible_households: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServerRanking {
    pub households: Vec<HouseholdRanking>,
    pub bottom: Vec<BottomShare>,
}

/// Rank the servers each household used with `tool`.
///
/// Speeds are normalized by the household's nominal speed for that tool and
/// direction. Servers with fewer than `min_tests` tests are left out; ties
/// in median go to the lexicographically smaller server id.
pub fn rank_servers(
    records: &[TestRecord],
    tool: EngineKind,
    min_tests: usize,
) -> Result<ServerRanking, StatsError> {
    let mut households = Vec::new();
    for ((hh, dir), rs) in by_household(records) {
        let rs: Vec<&TestRecord> = rs.into_iter().filter(|r| r.tool == tool).collect();
        if rs.is_empty() {
            continue;
        }
        let speeds: Vec<f64> = rs.iter().map(|r| r.speed_bps).collect();
        let s95 = nominal_speed(&speeds)?;
        let mut per_server: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &rs {
            per_server
                .entry(r.server_id.as_str())
                .or_default()
                .push(super::normalize(r.speed_bps, s95)?);
        }
        let mut ranked: Vec<ServerScore> = per_server
            .into_iter()
            .filter(|(_, v)| v.len() >= min_tests.max(1))
            .map(|(id, v)| ServerScore {
                server_id: id.to_string(),
                median_normalized: median(&v).unwrap_or(0.0),
                tests: v.len(),
            })
            .collect();
        ranked.sort_by(|a, b| {
            b.median_normalized
                .total_cmp(&a.median_normalized)
                .then_with(|| a.server_id.cmp(&b.server_id))
        });
        let delta = (ranked.len() >= 2)
            .then(|| ranked[0].median_normalized - ranked[ranked.len() - 1].median_normalized);
        households.push(HouseholdRanking {
            household_id: hh,
            direction: dir,
            ranked,
            delta,
        });
    }

    let mut counts: BTreeMap<(Direction, String), (usize, usize)> = BTreeMap::new();
    for h in households.iter().filter(|h| h.ranked.len() >= BOTTOM_K) {
        let bottom: BTreeSet<&str> = h.ranked[h.ranked.len() - BOTTOM_K..]
            .iter()
            .map(|s| s.server_id.as_str())
            .collect();
        for s in &h.ranked {
            let e = counts.entry((h.direction, s.server_id.clone())).or_default();
            e.1 += 1;
            if bottom.contains(s.server_id.as_str()) {
                e.0 += 1;
            }
        }
    }
    let bottom = counts
        .into_iter()
        .map(|((direction, server_id), (b, n))| BottomShare {
            server_id,
            direction,
            bottom_households: b,
            eligible_households: n,
            fraction: b as f64 / n as f64,
        })
        .collect();
    Ok(ServerRanking { households, bottom })
}
