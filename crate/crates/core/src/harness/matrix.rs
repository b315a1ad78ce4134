use std::fmt::Write as _;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{accuracy, CellParams, ExperimentSpec, HarnessError, CROSS_WARMUP_S};
use crate::emulink::{secs_to_nanos, LinkSpec};
use crate::engines::{run_engine, AdaptivePolicy, SimProvider, SpeedReport};
use crate::stats::{median, student_t_quantile};
use crate::transport::{
    CongestionAlgo, ConnectionConfig, SimNetwork, DEFAULT_SEND_BUFFER_BYTES, DEFAULT_SERVER_SEND_BUFFER_BYTES,
};
use crate::Direction;

pub const ROW_HEADER: [&str; 16] = [
    "cell_id",
    "engine",
    "direction",
    "capacity_bps",
    "rtt_ms",
    "loss",
    "cca",
    "cross",
    "accounting",
    "rep",
    "seed",
    "reported_bps",
    "average_bps",
    "duration_s",
    "conn_max",
    "error",
];

pub const SUMMARY_HEADER: [&str; 18] = [
    "cell_id",
    "engine",
    "direction",
    "capacity_bps",
    "rtt_ms",
    "loss",
    "cca",
    "cross",
    "accounting",
    "runs",
    "errors",
    "median_accuracy",
    "mean_accuracy",
    "ci95_low",
    "ci95_high",
    "median_reported_bps",
    "median_duration_s",
    "max_conns",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub cell_id: String,
    pub cell: CellParams,
    pub rep: usize,
    pub seed: u64,
    pub outcome: Result<RunOutcome, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub reported_bps: f64,
    pub average_bps: f64,
    pub duration_s: f64,
    pub conn_max: usize,
}

impl RunRow {
    pub fn accuracy(&self) -> Option<f64> {
        let o = self.outcome.as_ref().ok()?;
        accuracy(o.reported_bps, self.cell.capacity_bps()).ok()
    }

    fn record(&self) -> Vec<String> {
        let mut r = cell_columns(&self.cell_id, &self.cell);
        r.push(self.rep.to_string());
        r.push(self.seed.to_string());
        match &self.outcome {
            Ok(o) => r.extend([
                o.reported_bps.to_string(),
                o.average_bps.to_string(),
                o.duration_s.to_string(),
                o.conn_max.to_string(),
                String::new(),
            ]),
            Err(e) => {
                r.extend(std::iter::repeat_n(String::new(), 4));
                r.push(e.clone());
            }
        }
        r
    }
}

fn cell_columns(id: &str, c: &CellParams) -> Vec<String> {
    vec![
        id.to_string(),
        c.engine.as_str().to_string(),
        c.direction.as_str().to_string(),
        c.capacity_bps().to_string(),
        c.rtt_ms.to_string(),
        c.loss.to_string(),
        c.cca.as_str().to_string(),
        c.cross.to_string(),
        c.accounting.as_str().to_string(),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell_id: String,
    pub cell: CellParams,
    pub runs: usize,
    pub errors: usize,
    pub median_accuracy: Option<f64>,
    pub mean_accuracy: Option<f64>,
    /// Student-t interval on the mean accuracy; needs two successful runs.
    pub ci95: Option<(f64, f64)>,
    pub median_reported_bps: Option<f64>,
    pub median_duration_s: Option<f64>,
    pub max_conns: usize,
}

impl CellSummary {
    fn from_rows(cell_id: &str, cell: &CellParams, rows: &[&RunRow]) -> Self {
        let ok: Vec<&RunOutcome> = rows.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        let acc: Vec<f64> = rows.iter().filter_map(|r| r.accuracy()).collect();
        let n = acc.len();
        let mean = (n > 0).then(|| acc.iter().sum::<f64>() / n as f64);
        let ci95 = match mean {
            Some(m) if n >= 2 => {
                let var = acc.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                let t = student_t_quantile(0.975, (n - 1) as f64).ok();
                t.map(|t| {
                    let half = t * (var / n as f64).sqrt();
                    (m - half, m + half)
                })
            }
            _ => None,
        };
        let reported: Vec<f64> = ok.iter().map(|o| o.reported_bps).collect();
        let durations: Vec<f64> = ok.iter().map(|o| o.duration_s).collect();
        CellSummary {
            cell_id: cell_id.to_string(),
            cell: cell.clone(),
            runs: rows.len(),
            errors: rows.len() - ok.len(),
            median_accuracy: median(&acc),
            mean_accuracy: mean,
            ci95,
            median_reported_bps: median(&reported),
            median_duration_s: median(&durations),
            max_conns: ok.iter().map(|o| o.conn_max).max().unwrap_or(0),
        }
    }

    fn record(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut r = cell_columns(&self.cell_id, &self.cell);
        r.extend([
            self.runs.to_string(),
            self.errors.to_string(),
            opt(self.median_accuracy),
            opt(self.mean_accuracy),
            opt(self.ci95.map(|c| c.0)),
            opt(self.ci95.map(|c| c.1)),
            opt(self.median_reported_bps),
            opt(self.median_duration_s),
            self.max_conns.to_string(),
        ]);
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixResult {
    pub name: String,
    pub rows: Vec<RunRow>,
    pub summaries: Vec<CellSummary>,
}

fn write_table<W: Write>(
    out: W,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
}

impl MatrixResult {
    pub fn failed_runs(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_table(out, &ROW_HEADER, self.rows.iter().map(RunRow::record))
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_table(
            out,
            &SUMMARY_HEADER,
            self.summaries.iter().map(CellSummary::record),
        )
    }

    pub fn summary_text(&self) -> String {
        let mut s = format!(
            "{}: {} cells, {} runs, {} failed\n",
            if self.name.is_empty() {
                "matrix"
            } else {
                &self.name
            },
            self.summaries.len(),
            self.rows.len(),
            self.failed_runs()
        );
        let _ = writeln!(
            s,
            "{:<6} {:<8} {:<4} {:>10} {:>7} {:>6} {:<5} {:>5} {:<5} {:>9} {:>17} {:>6}",
            "cell",
            "engine",
            "dir",
            "cap_mbps",
            "rtt_ms",
            "loss",
            "cca",
            "cross",
            "acct",
            "median",
            "ci95",
            "conns"
        );
        for c in &self.summaries {
            let ci = c
                .ci95
                .map(|(lo, hi)| format!("[{lo:.3}, {hi:.3}]"))
                .unwrap_or_else(|| "-".into());
            let med = c
                .median_accuracy
                .map(|m| format!("{m:.3}"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<6} {:<8} {:<4} {:>10} {:>7} {:>6} {:<5} {:>5} {:<5} {:>9} {:>17} {:>6}",
                c.cell_id,
                c.cell.engine.as_str(),
                c.cell.direction.as_str(),
                c.cell.capacity_mbps,
                c.cell.rtt_ms,
                c.cell.loss,
                c.cell.cca.as_str(),
                c.cell.cross,
                c.cell.accounting.as_str(),
                med,
                ci,
                c.max_conns
            );
        }
        s
    }
}

/// A simulated access link for `cell`, with its background flows already
/// running for [`CROSS_WARMUP_S`].
pub(crate) fn prepare_provider(
    link: LinkSpec,
    cca: CongestionAlgo,
    direction: Direction,
    cross: usize,
    seed: u64,
) -> Result<SimProvider, HarnessError> {
    let mut net = SimNetwork::symmetric(link)?;
    if cross > 0 {
        let buffer = match direction {
            Direction::Down => DEFAULT_SERVER_SEND_BUFFER_BYTES,
            Direction::Up => DEFAULT_SEND_BUFFER_BYTES,
        };
        for i in 0..cross {
            let cfg = ConnectionConfig::new(cca)
                .with_send_buffer(buffer)
                .with_seed(seed.wrapping_mul(31).wrapping_add(1000 + i as u64));
            net.open(direction, cfg);
        }
        net.run_until(secs_to_nanos(CROSS_WARMUP_S))?;
    }
    Ok(SimProvider::new(net, cca, seed))
}

/// One run of one cell on a fresh simulated link.
pub fn run_cell_once(
    cell: &CellParams,
    seed: u64,
    policy: &AdaptivePolicy,
) -> Result<SpeedReport, HarnessError> {
    cell.validate()?;
    let link = LinkSpec::new(cell.capacity_bps(), cell.rtt_ms / 1000.0)
        .with_loss(cell.loss)
        .with_seed(seed);
    let mut provider = prepare_provider(link, cell.cca, cell.direction, cell.cross, seed)?;
    Ok(run_engine(
        cell.engine,
        &mut provider,
        cell.direction,
        cell.accounting,
        policy,
    )?)
}

/// Map over `items` on all available cores; output keeps input order.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len());
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.unwrap())
        .collect()
}

/// Run every cell `repetitions` times with seeds `base_seed + rep`.
///
/// Failed runs become error rows; the matrix always completes.
pub fn run_matrix(spec: &ExperimentSpec) -> Result<MatrixResult, HarnessError> {
    spec.validate()?;
    let cells = spec.cells();
    let width = cells.len().to_string().len().max(3);
    let ids: Vec<String> = (0..cells.len()).map(|i| format!("c{i:0width$}")).collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.repetitions).map(move |r| (c, r)))
        .collect();
    let rows = par_map(&jobs, |&(c, rep)| {
        let seed = spec.base_seed.wrapping_add(rep as u64);
        let outcome = run_cell_once(&cells[c], seed, &spec.policy)
            .map(|r| RunOutcome {
                reported_bps: r.reported_bits_per_s,
                average_bps: r.average_bits_per_s,
                duration_s: r.duration_s,
                conn_max: r.conn_max(),
            })
            .map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            log::warn!("{} rep {rep}: {e}", ids[c]);
        }
        RunRow {
            cell_id: ids[c].clone(),
            cell: cells[c].clone(),
            rep,
            seed,
            outcome,
        }
    });
    let summaries = cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let rs: Vec<&RunRow> = rows.iter().filter(|r| r.cell_id == ids[i]).collect();
            CellSummary::from_rows(&ids[i], cell, &rs)
        })
        .collect();
    Ok(MatrixResult {
        name: spec.name.clone(),
        rows,
        summaries,
    })
}
