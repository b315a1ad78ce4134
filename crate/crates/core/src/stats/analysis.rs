//! The five analyses over a set of test records, each producing CSV tables
//! and a short text summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use chrono::FixedOffset;

use super::ranking::{rank_servers, DEFAULT_MIN_SERVER_TESTS};
use super::records::{by_household, pair_tests, peak_offpeak_split, TestRecord, DEFAULT_PAIR_GAP_S};
use super::ttest::{paired_t_test, welch_t_test, StatResult, MIN_RELIABLE_N};
use super::{classify, consistency_ratio, mean, median, rel_diff, PairOutcome, RelDiffClass, StatsError};
use crate::engines::EngineKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    PairedTtest,
    ReldiffClasses,
    ServerRank,
    TimeOfDay,
    Consistency,
}

impl Analysis {
    pub const ALL: [Analysis; 5] = [
        Analysis::PairedTtest,
        Analysis::ReldiffClasses,
        Analysis::ServerRank,
        Analysis::TimeOfDay,
        Analysis::Consistency,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Analysis::PairedTtest => "paired-ttest",
            Analysis::ReldiffClasses => "reldiff-classes",
            Analysis::ServerRank => "server-rank",
            Analysis::TimeOfDay => "time-of-day",
            Analysis::Consistency => "consistency",
        }
    }
}

impl std::str::FromStr for Analysis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Analysis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Analysis::ALL.iter().map(|a| a.as_str()).collect();
                format!("unknown analysis '{s}' (valid: {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub alpha: f64,
    pub pair_gap_s: f64,
    pub min_server_tests: usize,
    /// Minimum tests in each of the peak and off-peak groups.
    pub min_group_tests: usize,
    pub rank_tool: EngineKind,
    pub local_tz: Option<FixedOffset>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            alpha: 0.01,
            pair_gap_s: DEFAULT_PAIR_GAP_S,
            min_server_tests: DEFAULT_MIN_SERVER_TESTS,
            min_group_tests: MIN_RELIABLE_N,
            rank_tool: EngineKind::AdaptiveMulti,
            local_tz: None,
        }
    }
}

/// A named table of already formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()
    }

    /// Whitespace-separated columns with a `#` header line, for gnuplot.
    pub fn write_dat<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# {}", self.header.join(" "))?;
        for r in &self.rows {
            let cells: Vec<String> = r
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        "NaN".into()
                    } else {
                        c.replace(' ', "_")
                    }
                })
                .collect();
            writeln!(out, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    pub analysis: Analysis,
    pub tables: Vec<Table>,
    pub summary: String,
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

fn stat_cells(r: &StatResult) -> Vec<String> {
    vec![
        f(r.t_stat),
        f(r.df),
        f(r.p_two_sided),
        r.reject_at_alpha.to_string(),
        r.small_sample.to_string(),
        r.degenerate_variance.to_string(),
    ]
}

const STAT_HEADER: [&str; 6] = ["t", "df", "p", "reject", "small_sample", "degenerate_variance"];

pub fn run_analysis(
    analysis: Analysis,
    records: &[TestRecord],
    opts: &AnalysisOptions,
) -> Result<AnalysisOutput, StatsError> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(StatsError::BadAlpha(opts.alpha));
    }
    if records.is_empty() {
        return Err(StatsError::EmptySeries);
    }
    let (tables, summary) = match analysis {
        Analysis::PairedTtest => paired_ttest(records, opts)?,
        Analysis::ReldiffClasses => reldiff_classes(records, opts)?,
        Analysis::ServerRank => server_rank(records, opts)?,
        Analysis::TimeOfDay => time_of_day(records, opts)?,
        Analysis::Consistency => consistency(records)?,
    };
    Ok(AnalysisOutput {
        analysis,
        tables,
        summary,
    })
}

type PairGroups = BTreeMap<(String, crate::Direction), Vec<(f64, f64)>>;

fn grouped_pairs(records: &[TestRecord], opts: &AnalysisOptions) -> PairGroups {
    let mut groups: PairGroups = BTreeMap::new();
    for p in pair_tests(records, opts.pair_gap_s) {
        groups
            .entry((p.household_id, p.direction))
            .or_default()
            .push((p.adaptive_bps, p.single_bps));
    }
    groups
}

fn paired_ttest(records: &[TestRecord], opts: &AnalysisOptions) -> Result<(Vec<Table>, String), StatsError> {
    let mut header = vec![
        "household_id",
        "direction",
        "pairs",
        "mean_adaptive_bps",
        "mean_single_bps",
        "mean_diff_bps",
        "diff_over_max_mean",
        "within_5pct",
        "within_10pct",
    ];
    header.extend(STAT_HEADER);
    header.push("status");
    let mut table = Table::new("paired_ttest", &header);
    // per direction: tested, rejected, rejected within 5%, within 10%
    let mut tally: BTreeMap<crate::Direction, [usize; 4]> = BTreeMap::new();
    for ((hh, dir), pairs) in grouped_pairs(records, opts) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let s: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let diffs: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
        let (ma, ms) = (mean(&a).unwrap(), mean(&s).unwrap());
        let md = mean(&diffs).unwrap();
        let rel = md.abs() / ma.max(ms);
        let mut row = vec![
            hh,
            dir.to_string(),
            pairs.len().to_string(),
            f(ma),
            f(ms),
            f(md),
            f(rel),
            (rel <= 0.05).to_string(),
            (rel <= 0.10).to_string(),
        ];
        match paired_t_test(&diffs, opts.alpha) {
            Ok(r) => {
                let t = tally.entry(dir).or_default();
                t[0] += 1;
                if r.reject_at_alpha {
                    t[1] += 1;
                    t[2] += usize::from(rel <= 0.05);
                    t[3] += usize::from(rel <= 0.10);
                }
                row.extend(stat_cells(&r));
                row.push("ok".into());
            }
            Err(StatsError::TooFewSamples { .. }) => {
                row.extend(std::iter::repeat_n(String::new(), STAT_HEADER.len()));
                row.push("too_few_pairs".into());
            }
            Err(e) => return Err(e),
        }
        table.push(row);
    }
    let mut summary = format!("paired t-test, alpha = {}\n", opts.alpha);
    for (dir, [n, rej, w5, w10]) in tally {
        let _ = writeln!(
            summary,
            "{dir}: {rej} of {n} households differ significantly; of those, {w5} within 5% and {w10} within 10% of the larger mean"
        );
    }
    Ok((vec![table], summary))
}

fn reldiff_classes(
    records: &[TestRecord],
    opts: &AnalysisOptions,
) -> Result<(Vec<Table>, String), StatsError> {
    let outcomes: Vec<PairOutcome> = RelDiffClass::ALL
        .into_iter()
        .map(PairOutcome::Class)
        .chain([PairOutcome::Equal])
        .collect();
    let mut header = vec!["household_id".to_string(), "direction".into(), "pairs".into()];
    header.extend(outcomes.iter().map(|o| o.as_str().to_string()));
    header.push("median_rel_diff".into());
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new("reldiff_classes", &hdr);
    let mut totals: BTreeMap<crate::Direction, BTreeMap<PairOutcome, usize>> = BTreeMap::new();
    for ((hh, dir), pairs) in grouped_pairs(records, opts) {
        let mut counts: BTreeMap<PairOutcome, usize> = BTreeMap::new();
        let mut deltas = Vec::with_capacity(pairs.len());
        for &(a, s) in &pairs {
            let d = rel_diff(a, s)?;
            deltas.push(d);
            *counts.entry(classify(d)?).or_default() += 1;
        }
        let n = pairs.len();
        let tot = totals.entry(dir).or_default();
        let mut row = vec![hh, dir.to_string(), n.to_string()];
        for o in &outcomes {
            let c = counts.get(o).copied().unwrap_or(0);
            *tot.entry(*o).or_default() += c;
            row.push(f(c as f64 / n as f64));
        }
        row.push(opt(median(&deltas)));
        table.push(row);
    }
    let mut summary = String::from("relative difference classes (all pairs)\n");
    for (dir, counts) in totals {
        let n: usize = counts.values().sum();
        let parts: Vec<String> = outcomes
            .iter()
            .map(|o| {
                let c = counts.get(o).copied().unwrap_or(0);
                format!("{} {:.1}%", o.as_str(), 100.0 * c as f64 / n.max(1) as f64)
            })
            .collect();
        let _ = writeln!(summary, "{dir} ({n} pairs): {}", parts.join(", "));
    }
    Ok((vec![table], summary))
}

fn server_rank(records: &[TestRecord], opts: &AnalysisOptions) -> Result<(Vec<Table>, String), StatsError> {
    let ranking = rank_servers(records, opts.rank_tool, opts.min_server_tests)?;
    let mut ranks = Table::new(
        "server_rank",
        &[
            "household_id",
            "direction",
            "rank",
            "server_id",
            "median_normalized",
            "tests",
        ],
    );
    let mut deltas = Table::new(
        "server_rank_delta",
        &["household_id", "direction", "servers", "delta"],
    );
    for h in &ranking.households {
        for (i, s) in h.ranked.iter().enumerate() {
            ranks.push(vec![
                h.household_id.clone(),
                h.direction.to_string(),
                (i + 1).to_string(),
                s.server_id.clone(),
                f(s.median_normalized),
                s.tests.to_string(),
            ]);
        }
        if let Some(d) = h.delta {
            deltas.push(vec![
                h.household_id.clone(),
                h.direction.to_string(),
                h.ranked.len().to_string(),
                f(d),
            ]);
        }
    }
    let mut bottom = Table::new(
        "server_rank_bottom3",
        &[
            "server_id",
            "direction",
            "bottom3_households",
            "eligible_households",
            "fraction",
        ],
    );
    for b in &ranking.bottom {
        bottom.push(vec![
            b.server_id.clone(),
            b.direction.to_string(),
            b.bottom_households.to_string(),
            b.eligible_households.to_string(),
            f(b.fraction),
        ]);
    }
    let mut summary = format!(
        "server ranking for {} tests, servers with at least {} tests\n",
        opts.rank_tool.as_str(),
        opts.min_server_tests
    );
    let mut worst: Vec<_> = ranking.bottom.iter().collect();
    worst.sort_by(|a, b| {
        b.fraction
            .total_cmp(&a.fraction)
            .then(a.server_id.cmp(&b.server_id))
    });
    for b in worst.iter().take(5) {
        let _ = writeln!(
            summary,
            "{} ({}): bottom three in {} of {} households ({:.0}%)",
            b.server_id,
            b.direction,
            b.bottom_households,
            b.eligible_households,
            100.0 * b.fraction
        );
    }
    let ds: Vec<f64> = ranking.households.iter().filter_map(|h| h.delta).collect();
    if let Some(m) = median(&ds) {
        let _ = writeln!(
            summary,
            "median best-minus-worst gap: {m:.3} over {} households",
            ds.len()
        );
    }
    Ok((vec![ranks, bottom, deltas], summary))
}

fn time_of_day(records: &[TestRecord], opts: &AnalysisOptions) -> Result<(Vec<Table>, String), StatsError> {
    let mut header = vec![
        "household_id",
        "direction",
        "tool",
        "peak_tests",
        "offpeak_tests",
        "mean_peak_bps",
        "mean_offpeak_bps",
    ];
    header.extend(STAT_HEADER);
    header.push("status");
    let mut table = Table::new("time_of_day", &header);
    let mut tally: BTreeMap<(crate::Direction, EngineKind), [usize; 2]> = BTreeMap::new();
    for ((hh, dir), rs) in by_household(records) {
        for tool in [EngineKind::AdaptiveMulti, EngineKind::SingleStream] {
            let rs: Vec<&TestRecord> = rs.iter().copied().filter(|r| r.tool == tool).collect();
            if rs.is_empty() {
                continue;
            }
            let (peak, off) = peak_offpeak_split(&rs, opts.local_tz)?;
            let p: Vec<f64> = peak.iter().map(|r| r.speed_bps).collect();
            let o: Vec<f64> = off.iter().map(|r| r.speed_bps).collect();
            let mut row = vec![
                hh.clone(),
                dir.to_string(),
                tool.as_str().to_string(),
                p.len().to_string(),
                o.len().to_string(),
                opt(mean(&p)),
                opt(mean(&o)),
            ];
            let min = opts.min_group_tests.max(2);
            if p.len() < min || o.len() < min {
                row.extend(std::iter::repeat_n(String::new(), STAT_HEADER.len()));
                row.push("insufficient_tests".into());
            } else {
                let r = welch_t_test(&p, &o, opts.alpha)?;
                let t = tally.entry((dir, tool)).or_default();
                t[0] += 1;
                t[1] += usize::from(r.reject_at_alpha);
                row.extend(stat_cells(&r));
                row.push("ok".into());
            }
            table.push(row);
        }
    }
    let mut summary = format!(
        "peak (19:00-23:00 local) vs off-peak, Welch t-test, alpha = {}, at least {} tests per group\n",
        opts.alpha, opts.min_group_tests
    );
    for ((dir, tool), [n, rej]) in tally {
        let _ = writeln!(
            summary,
            "{dir} {}: {rej} of {n} households differ between peak and off-peak",
            tool.as_str()
        );
    }
    Ok((vec![table], summary))
}

fn consistency(records: &[TestRecord]) -> Result<(Vec<Table>, String), StatsError> {
    let mut table = Table::new(
        "consistency",
        &[
            "household_id",
            "direction",
            "adaptive_tests",
            "single_tests",
            "ratio_p90",
        ],
    );
    let mut ratios: BTreeMap<crate::Direction, Vec<f64>> = BTreeMap::new();
    for ((hh, dir), rs) in by_household(records) {
        let pick =
            |k: EngineKind| -> Vec<f64> { rs.iter().filter(|r| r.tool == k).map(|r| r.speed_bps).collect() };
        let (a, s) = (pick(EngineKind::AdaptiveMulti), pick(EngineKind::SingleStream));
        if a.is_empty() || s.is_empty() {
            continue;
        }
        let ct = consistency_ratio(&a, &s)?;
        ratios.entry(dir).or_default().push(ct);
        table.push(vec![
            hh,
            dir.to_string(),
            a.len().to_string(),
            s.len().to_string(),
            f(ct),
        ]);
    }
    let mut summary = String::from("90th-percentile ratio, adaptive over single-stream\n");
    for (dir, v) in ratios {
        let above = v.iter().filter(|&&x| x > 1.0).count();
        let _ = writeln!(
            summary,
            "{dir}: median ratio {:.3} over {} households; {above} above 1",
            median(&v).unwrap_or(f64::NAN),
            v.len()
        );
    }
    Ok((vec![table], summary))
}
