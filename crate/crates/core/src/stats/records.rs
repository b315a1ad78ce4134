//! Test records and the CSV formats they come from.
//!
//! Two inputs are understood. The external schema has one row per test:
//!
//! ```text
//! household_id,server_id,timestamp_iso8601,direction,tool,speed_bps
//! ```
//!
//! The harness matrix CSV is read as one household per cell (the cell
//! parameters minus the engine), with repetitions pairing the two engines.
//! A household whose service tier changed is split by giving the rows after
//! the change a distinct `household_id`.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{DateTime, FixedOffset, NaiveDateTime, Timelike};
use serde::Serialize;

use super::StatsError;
use crate::engines::EngineKind;
use crate::Direction;

pub const EXTERNAL_HEADER: [&str; 6] = [
    "household_id",
    "server_id",
    "timestamp_iso8601",
    "direction",
    "tool",
    "speed_bps",
];

/// Default longest gap between two tests that still form a pair.
pub const DEFAULT_PAIR_GAP_S: f64 = 600.0;

pub const PEAK_START_HOUR: u32 = 19;
pub const PEAK_END_HOUR: u32 = 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timestamp {
    Zoned(DateTime<FixedOffset>),
    /// Wall-clock time with no offset. Orderable, but useless for
    /// time-of-day analysis.
    Naive(NaiveDateTime),
}

impl Timestamp {
    pub fn parse(s: &str) -> Result<Timestamp, String> {
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(Timestamp::Zoned(dt));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
            if let Ok(n) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(Timestamp::Naive(n));
            }
        }
        Err(format!("cannot parse timestamp '{s}'"))
    }

    /// Milliseconds for ordering; naive times are read as UTC.
    pub fn sort_key_ms(&self) -> i64 {
        match self {
            Timestamp::Zoned(dt) => dt.timestamp_millis(),
            Timestamp::Naive(n) => n.and_utc().timestamp_millis(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRecord {
    pub household_id: String,
    pub server_id: String,
    pub timestamp: Option<Timestamp>,
    pub timestamp_raw: String,
    pub direction: Direction,
    pub tool: EngineKind,
    pub speed_bps: f64,
    /// Explicit pairing key (the repetition index for harness input).
    pub pair_key: Option<String>,
}

/// One adaptive test and one single-stream test run back to back.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedObservation {
    pub household_id: String,
    pub direction: Direction,
    pub adaptive_server_id: String,
    pub adaptive_bps: f64,
    pub single_bps: f64,
}

fn missing(col: &str) -> StatsError {
    StatsError::MissingColumn(col.to_string())
}

fn bad_field(line: u64, field: &str, msg: impl std::fmt::Display) -> StatsError {
    StatsError::Input(format!("line {line}: field '{field}': {msg}"))
}

/// Read either supported CSV layout, chosen by its header.
pub fn read_records<R: Read>(input: R) -> Result<Vec<TestRecord>, StatsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| StatsError::Input(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    if col("cell_id").is_some() {
        read_harness(rdr, &headers)
    } else {
        read_external(rdr, &headers)
    }
}

fn columns(headers: &csv::StringRecord, names: &[&str]) -> Result<Vec<usize>, StatsError> {
    names
        .iter()
        .map(|n| headers.iter().position(|h| h == *n).ok_or_else(|| missing(n)))
        .collect()
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn read_external<R: Read>(
    mut rdr: csv::Reader<R>,
    headers: &csv::StringRecord,
) -> Result<Vec<TestRecord>, StatsError> {
    let idx = columns(headers, &EXTERNAL_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| StatsError::Input(e.to_string()))?;
        let line = line_of(&row);
        let get = |i: usize| row.get(idx[i]).unwrap_or("");
        let raw = get(2).to_string();
        let timestamp = if raw.is_empty() {
            None
        } else {
            Some(Timestamp::parse(&raw).map_err(|e| bad_field(line, EXTERNAL_HEADER[2], e))?)
        };
        let direction = get(3)
            .parse()
            .map_err(|e| bad_field(line, EXTERNAL_HEADER[3], e))?;
        let tool = get(4)
            .parse()
            .map_err(|e| bad_field(line, EXTERNAL_HEADER[4], e))?;
        let speed_bps: f64 = get(5)
            .parse()
            .map_err(|e| bad_field(line, EXTERNAL_HEADER[5], e))?;
        if !(speed_bps > 0.0) || !speed_bps.is_finite() {
            return Err(bad_field(line, EXTERNAL_HEADER[5], "speed must be positive"));
        }
        out.push(TestRecord {
            household_id: get(0).to_string(),
            server_id: get(1).to_string(),
            timestamp,
            timestamp_raw: raw,
            direction,
            tool,
            speed_bps,
            pair_key: None,
        });
    }
    Ok(out)
}

const HARNESS_KEY: [&str; 6] = ["capacity_bps", "rtt_ms", "loss", "cca", "cross", "accounting"];

fn read_harness<R: Read>(
    mut rdr: csv::Reader<R>,
    headers: &csv::StringRecord,
) -> Result<Vec<TestRecord>, StatsError> {
    let key_idx = columns(headers, &HARNESS_KEY)?;
    let names = ["engine", "direction", "rep", "reported_bps", "error"];
    let idx = columns(headers, &names)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| StatsError::Input(e.to_string()))?;
        let line = line_of(&row);
        let get = |i: usize| row.get(idx[i]).unwrap_or("");
        if !get(4).is_empty() {
            continue;
        }
        let household_id = key_idx
            .iter()
            .map(|&i| row.get(i).unwrap_or(""))
            .collect::<Vec<_>>()
            .join("/");
        let tool = get(0).parse().map_err(|e| bad_field(line, names[0], e))?;
        let direction = get(1).parse().map_err(|e| bad_field(line, names[1], e))?;
        let speed_bps: f64 = get(3).parse().map_err(|e| bad_field(line, names[3], e))?;
        if !(speed_bps > 0.0) {
            continue;
        }
        out.push(TestRecord {
            household_id,
            server_id: "sim".to_string(),
            timestamp: None,
            timestamp_raw: String::new(),
            direction,
            tool,
            speed_bps,
            pair_key: Some(get(2).to_string()),
        });
    }
    Ok(out)
}

pub fn write_records<W: std::io::Write>(records: &[TestRecord], out: W) -> Result<(), StatsError> {
    let io = |e: csv::Error| StatsError::Input(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EXTERNAL_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.household_id.as_str(),
            r.server_id.as_str(),
            r.timestamp_raw.as_str(),
            r.direction.as_str(),
            r.tool.as_str(),
            &r.speed_bps.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| StatsError::Input(e.to_string()))
}

/// Group records by `(household, direction)`, preserving input order.
pub fn by_household(records: &[TestRecord]) -> BTreeMap<(String, Direction), Vec<&TestRecord>> {
    let mut map: BTreeMap<(String, Direction), Vec<&TestRecord>> = BTreeMap::new();
    for r in records {
        map.entry((r.household_id.clone(), r.direction))
            .or_default()
            .push(r);
    }
    map
}

fn make_pair(a: &TestRecord, b: &TestRecord) -> Option<PairedObservation> {
    let (ad, si) = match (a.tool, b.tool) {
        (EngineKind::AdaptiveMulti, EngineKind::SingleStream) => (a, b),
        (EngineKind::SingleStream, EngineKind::AdaptiveMulti) => (b, a),
        _ => return None,
    };
    Some(PairedObservation {
        household_id: a.household_id.clone(),
        direction: a.direction,
        adaptive_server_id: ad.server_id.clone(),
        adaptive_bps: ad.speed_bps,
        single_bps: si.speed_bps,
    })
}

/// Form paired observations.
///
/// Records with a pair key are paired by `(household, direction, key)`.
/// The rest are sorted by time within each household and direction, and
/// two consecutive tests of different tools at most `max_gap_s` apart form
/// a pair; each test joins at most one pair.
pub fn pair_tests(records: &[TestRecord], max_gap_s: f64) -> Vec<PairedObservation> {
    let mut out = Vec::new();
    for (_, group) in by_household(records) {
        let (keyed, mut timed): (Vec<&TestRecord>, Vec<&TestRecord>) =
            group.into_iter().partition(|r| r.pair_key.is_some());
        let mut by_key: BTreeMap<&str, Vec<&TestRecord>> = BTreeMap::new();
        for r in keyed {
            by_key
                .entry(r.pair_key.as_deref().unwrap_or(""))
                .or_default()
                .push(r);
        }
        for (_, rs) in by_key {
            if let [a, b] = rs[..] {
                out.extend(make_pair(a, b));
            }
        }
        timed.retain(|r| r.timestamp.is_some());
        timed.sort_by_key(|r| r.timestamp.map(|t| t.sort_key_ms()));
        let mut i = 0;
        while i + 1 < timed.len() {
            let (a, b) = (timed[i], timed[i + 1]);
            let gap_ms = b.timestamp.unwrap().sort_key_ms() - a.timestamp.unwrap().sort_key_ms();
            match make_pair(a, b) {
                Some(p) if gap_ms as f64 <= max_gap_s * 1000.0 => {
                    out.push(p);
                    i += 2;
                }
                _ => i += 1,
            }
        }
    }
    out
}

/// True when `hour` (local) falls in the evening peak, [19:00, 23:00).
pub fn is_peak_hour(hour: u32) -> bool {
    (PEAK_START_HOUR..PEAK_END_HOUR).contains(&hour)
}

/// Split records into peak and off-peak by local time of day.
///
/// Local time is the timestamp's own offset unless `local_tz` overrides it.
pub fn peak_offpeak_split<'a>(
    records: &[&'a TestRecord],
    local_tz: Option<FixedOffset>,
) -> Result<(Vec<&'a TestRecord>, Vec<&'a TestRecord>), StatsError> {
    let mut peak = Vec::new();
    let mut off = Vec::new();
    for &r in records {
        let dt = match r.timestamp {
            Some(Timestamp::Zoned(dt)) => dt,
            _ => return Err(StatsError::NaiveTimestamp(r.timestamp_raw.clone())),
        };
        let hour = match local_tz {
            Some(tz) => dt.with_timezone(&tz).hour(),
            None => dt.hour(),
        };
        if is_peak_hour(hour) {
            peak.push(r);
        } else {
            off.push(r);
        }
    }
    Ok((peak, off))
}
