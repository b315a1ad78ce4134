use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, FixedOffset, NaiveDate, SecondsFormat, TimeDelta};
use speedlab_core::emulink::LinkSpec;
use speedlab_core::engines::{run_engine, AdaptivePolicy};
use speedlab_core::harness::households::{generate, GeneratorConfig};
use speedlab_core::harness::{
    canned, plot, run_matrix, run_paired, CellParams, ExperimentSpec, MatrixResult, PairedConfig,
};
use speedlab_core::stats::analysis::{run_analysis, AnalysisOptions};
use speedlab_core::stats::records::{read_records, write_records, Timestamp};
use speedlab_core::stats::{mean, paired_t_test, TestRecord};
use speedlab_wire::{serve, ServerConfig, WireProvider};

use crate::{AnalyzeArgs, Cli, Command, FiguresCommand, GenerateArgs, PairedArgs, TestArgs};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input: exit 1.
    Usage(String),
    /// The run went ahead but some or all of it failed: exit 2.
    Failed(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Failed(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

type CliResult = Result<(), CliError>;

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult {
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))
}

pub fn run(cli: Cli) -> CliResult {
    let seed = cli.seed;
    match cli.command {
        Command::Serve { listen } => cmd_serve(&listen),
        Command::Test(args) => cmd_test(&args),
        Command::Matrix { config, out, reps } => cmd_matrix(&config, &out, reps, seed),
        Command::Paired(args) => cmd_paired(&args, seed),
        Command::Generate(args) => cmd_generate(&args, seed),
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Figures { action } => match action {
            FiguresCommand::List => cmd_figures_list(),
            FiguresCommand::Run { names, out, reps } => cmd_figures_run(&names, &out, reps, seed),
        },
    }
}

fn cmd_serve(listen: &str) -> CliResult {
    let listener = TcpListener::bind(listen).map_err(|e| usage(format!("cannot listen on {listen}: {e}")))?;
    let addr = listener.local_addr().map_err(usage)?;
    println!("listening on {addr}");
    serve(listener, ServerConfig::default()).map_err(|e| CliError::Failed(e.to_string()))
}

fn cmd_test(a: &TestArgs) -> CliResult {
    if !(a.connect_timeout_s > 0.0) || !a.connect_timeout_s.is_finite() {
        return Err(usage("--connect-timeout-s must be positive"));
    }
    let mut p = WireProvider::new(a.server.as_str(), a.engine)
        .map_err(|e| CliError::Failed(e.to_string()))?
        .with_connect_timeout(Duration::from_secs_f64(a.connect_timeout_s));
    let report = run_engine(
        a.engine,
        &mut p,
        a.direction,
        a.accounting,
        &AdaptivePolicy::default(),
    )
    .map_err(|e| CliError::Failed(e.to_string()))?;
    println!(
        "{} {} {}: {:.3} Mbps over {:.2} s, {} connection(s)",
        report.engine.as_str(),
        report.direction,
        report.accounting.as_str(),
        report.reported_bits_per_s / 1e6,
        report.duration_s,
        report.conn_max()
    );
    if let Some(path) = &a.out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            out_dir(dir)?;
        }
        let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Failed(e.to_string()))?;
        write_with(path, |w| writeln!(w, "{json}"))?;
    }
    Ok(())
}

/// A config file path, or failing that a canned config name.
fn load_spec(config: &str) -> Result<(ExperimentSpec, String), CliError> {
    let path = Path::new(config);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{config}: {e}")))?;
        let spec = ExperimentSpec::from_json(&text).map_err(|e| usage(format!("{config}: {e}")))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let name = if spec.name.is_empty() {
            stem
        } else {
            spec.name.clone()
        };
        return Ok((spec, name));
    }
    match canned::canned(config) {
        Some(Ok(spec)) => {
            let name = spec.name.clone();
            Ok((spec, name))
        }
        Some(Err(e)) => Err(usage(format!("canned config {config}: {e}"))),
        None => {
            let names: Vec<&str> = canned::names().collect();
            Err(usage(format!(
                "{config}: no such file or canned config (canned: {})",
                names.join(", ")
            )))
        }
    }
}

fn apply_overrides(spec: &mut ExperimentSpec, reps: Option<usize>, seed: Option<u64>) -> CliResult {
    if let Some(r) = reps {
        spec.repetitions = r;
    }
    if let Some(s) = seed {
        spec.base_seed = s;
    }
    spec.validate().map_err(usage)
}

fn write_matrix(result: &MatrixResult, name: &str, out: &Path) -> CliResult {
    write_with(&out.join(format!("{name}.csv")), |w| result.write_rows_csv(w))?;
    write_with(&out.join(format!("{name}_summary.csv")), |w| {
        result.write_summary_csv(w)
    })?;
    let text = result.summary_text();
    write_with(&out.join(format!("{name}_summary.txt")), |w| {
        w.write_all(text.as_bytes())
    })?;
    print!("{text}");
    Ok(())
}

fn partial(result: &MatrixResult) -> CliResult {
    match result.failed_runs() {
        0 => Ok(()),
        n => Err(CliError::Failed(format!(
            "{n} of {} runs failed",
            result.rows.len()
        ))),
    }
}

fn cmd_matrix(config: &str, out: &Path, reps: Option<usize>, seed: Option<u64>) -> CliResult {
    let (mut spec, name) = load_spec(config)?;
    apply_overrides(&mut spec, reps, seed)?;
    out_dir(out)?;
    let result = run_matrix(&spec).map_err(usage)?;
    let name = if name.is_empty() {
        "matrix".to_string()
    } else {
        name
    };
    write_matrix(&result, &name, out)?;
    partial(&result)
}

fn cmd_figures_list() -> CliResult {
    for name in canned::names() {
        let spec = canned::canned(name)
            .expect("listed name")
            .map_err(|e| usage(format!("{name}: {e}")))?;
        println!(
            "{name:<28} {:>3} cells x {} reps",
            spec.cells().len(),
            spec.repetitions
        );
    }
    Ok(())
}

fn cmd_figures_run(names: &[String], out: &Path, reps: Option<usize>, seed: Option<u64>) -> CliResult {
    let names: Vec<String> = if names.is_empty() {
        canned::names().map(String::from).collect()
    } else {
        names.to_vec()
    };
    let mut specs = Vec::new();
    for n in &names {
        let Some(spec) = canned::canned(n) else {
            let known: Vec<&str> = canned::names().collect();
            return Err(usage(format!(
                "unknown figure '{n}' (known: {})",
                known.join(", ")
            )));
        };
        let mut spec = spec.map_err(|e| usage(format!("{n}: {e}")))?;
        apply_overrides(&mut spec, reps, seed)?;
        specs.push(spec);
    }
    out_dir(out)?;
    let mut failed = 0;
    for spec in &specs {
        let result = run_matrix(spec).map_err(usage)?;
        let name = &spec.name;
        write_matrix(&result, name, out)?;
        let (dat, labels) = plot::data_file(&result);
        write_with(&out.join(format!("{name}.dat")), |w| w.write_all(dat.as_bytes()))?;
        let gp = plot::script(name, &result, &labels);
        write_with(&out.join(format!("{name}.gp")), |w| w.write_all(gp.as_bytes()))?;
        failed += result.failed_runs();
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} runs failed")));
    }
    Ok(())
}

const PAIRED_HEADER: [&str; 16] = [
    "household_id",
    "server_id",
    "direction",
    "rep",
    "seed",
    "first",
    "gap_s",
    "adaptive_bps",
    "single_bps",
    "adaptive_duration_s",
    "single_duration_s",
    "adaptive_conn_max",
    "background_before_first_bps",
    "background_before_second_bps",
    "warnings",
    "error",
];

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn epoch() -> DateTime<FixedOffset> {
    NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .and_then(|t| t.and_local_timezone(FixedOffset::east_opt(0)?).single())
        .expect("valid epoch")
}

fn cmd_paired(a: &PairedArgs, seed: Option<u64>) -> CliResult {
    let cell = CellParams {
        capacity_mbps: a.capacity_mbps,
        rtt_ms: a.rtt_ms,
        loss: a.loss,
        cca: a.cca,
        cross: a.cross,
        direction: a.direction,
        accounting: a.accounting,
        ..CellParams::default()
    };
    cell.validate().map_err(usage)?;
    if a.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    if !a.gap_s.is_finite() {
        return Err(usage("--gap-s must be finite"));
    }
    out_dir(&a.out)?;
    let mut cfg = PairedConfig::new(&a.household, a.direction);
    cfg.cca = a.cca;
    cfg.accounting = a.accounting;
    cfg.first = a.first;
    cfg.idle_gap_s = a.gap_s;
    cfg.cross_flows = a.cross;
    let base = seed.unwrap_or(1);

    let mut lines = vec![PAIRED_HEADER.join(",")];
    let mut records: Vec<TestRecord> = Vec::new();
    let mut diffs = Vec::new();
    let (mut adaptive, mut single) = (Vec::new(), Vec::new());
    let mut failed = 0;
    for rep in 0..a.reps {
        let s = base.wrapping_add(rep as u64);
        let link = LinkSpec::new(cell.capacity_bps(), a.rtt_ms / 1000.0)
            .with_loss(a.loss)
            .with_seed(s);
        let prefix = [
            csv_field(&a.household),
            csv_field(&cfg.server_id),
            a.direction.to_string(),
            rep.to_string(),
            s.to_string(),
            a.first.as_str().to_string(),
        ];
        let mut row: Vec<String> = prefix.to_vec();
        match run_paired(link, &cfg, s) {
            Ok(r) => {
                for w in &r.warnings {
                    log::warn!("rep {rep}: {w}");
                }
                row.extend([
                    r.gap_s.to_string(),
                    r.report_a.reported_bits_per_s.to_string(),
                    r.report_b.reported_bits_per_s.to_string(),
                    r.report_a.duration_s.to_string(),
                    r.report_b.duration_s.to_string(),
                    r.report_a.conn_max().to_string(),
                    opt(r.background_before[0]),
                    opt(r.background_before[1]),
                    csv_field(&r.warnings.join("; ")),
                    String::new(),
                ]);
                // One pair per hour on a synthetic clock, so time-based pairing
                // recovers exactly these pairs.
                let hour = epoch() + TimeDelta::hours(rep as i64);
                for (report, start) in [(&r.report_a, r.start_a_s), (&r.report_b, r.start_b_s)] {
                    let at = hour + TimeDelta::milliseconds((start * 1000.0).round() as i64);
                    records.push(TestRecord {
                        household_id: a.household.clone(),
                        server_id: cfg.server_id.clone(),
                        timestamp: Some(Timestamp::Zoned(at)),
                        timestamp_raw: at.to_rfc3339_opts(SecondsFormat::Millis, false),
                        direction: a.direction,
                        tool: report.engine,
                        speed_bps: report.reported_bits_per_s,
                        pair_key: None,
                    });
                }
                adaptive.push(r.report_a.reported_bits_per_s);
                single.push(r.report_b.reported_bits_per_s);
                diffs.push(r.report_a.reported_bits_per_s - r.report_b.reported_bits_per_s);
            }
            Err(e) => {
                failed += 1;
                log::warn!("rep {rep} failed: {e}");
                row.extend(std::iter::repeat_n(String::new(), 9));
                row.push(csv_field(&e.to_string()));
            }
        }
        lines.push(row.join(","));
    }
    write_with(&a.out.join("paired.csv"), |w| writeln!(w, "{}", lines.join("\n")))?;
    let tests = a.out.join("tests.csv");
    let mut w = create(&tests)?;
    write_records(&records, &mut w).map_err(|e| CliError::Failed(e.to_string()))?;

    println!("{} pairs, {failed} failed", a.reps - failed);
    if let (Some(ma), Some(ms)) = (mean(&adaptive), mean(&single)) {
        println!(
            "mean adaptive {:.3} Mbps, mean single {:.3} Mbps",
            ma / 1e6,
            ms / 1e6
        );
    }
    if diffs.len() >= 2 {
        if let Ok(t) = paired_t_test(&diffs, 0.01) {
            println!(
                "paired t = {:.3}, df = {}, p = {:.4}, reject at 0.01: {}",
                t.t_stat, t.df, t.p_two_sided, t.reject_at_alpha
            );
        }
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} pairs failed", a.reps)));
    }
    Ok(())
}

fn cmd_generate(a: &GenerateArgs, seed: Option<u64>) -> CliResult {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<GeneratorConfig>(&text).map_err(|e| {
                usage(format!(
                    "{}: line {} column {}: {e}",
                    path.display(),
                    e.line(),
                    e.column()
                ))
            })?
        }
        None => GeneratorConfig::default(),
    };
    if let Some(n) = a.households {
        cfg.households = n;
    }
    if let Some(n) = a.degraded {
        cfg.degraded = n;
    }
    if let Some(n) = a.days {
        cfg.days = n;
    }
    if a.slow_server.is_some() {
        cfg.slow_server = a.slow_server;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    out_dir(&a.out)?;
    let data = generate(&cfg).map_err(|e| match e {
        speedlab_core::harness::HarnessError::InvalidSpec(_) => usage(e),
        other => CliError::Failed(other.to_string()),
    })?;
    let mut w = create(&a.out.join("tests.csv"))?;
    write_records(&data.records, &mut w).map_err(|e| CliError::Failed(e.to_string()))?;
    let mut truth = vec!["household_id,capacity_mbps,base_rtt_ms,peak_degraded".to_string()];
    truth.extend(data.truth.iter().map(|t| {
        format!(
            "{},{},{},{}",
            t.household_id, t.capacity_mbps, t.base_rtt_ms, t.peak_degraded
        )
    }));
    write_with(&a.out.join("truth.csv"), |w| writeln!(w, "{}", truth.join("\n")))?;
    println!(
        "{} tests from {} households ({} degraded{})",
        data.records.len(),
        data.truth.len(),
        data.truth.iter().filter(|t| t.peak_degraded).count(),
        data.slow_server_id
            .map(|s| format!(", slow server {s}"))
            .unwrap_or_default()
    );
    Ok(())
}

fn parse_tz(s: &str) -> Result<FixedOffset, CliError> {
    let bad = || {
        usage(format!(
            "--tz '{s}': expected an offset such as -05:00, +0530 or UTC"
        ))
    };
    if s.eq_ignore_ascii_case("utc") || s == "Z" {
        return Ok(FixedOffset::east_opt(0).expect("zero offset"));
    }
    if let Ok(off) = s.parse::<FixedOffset>() {
        return Ok(off);
    }
    let hours: i32 = s.parse().map_err(|_| bad())?;
    FixedOffset::east_opt(hours * 3600).ok_or_else(bad)
}

fn cmd_analyze(a: &AnalyzeArgs) -> CliResult {
    let local_tz = a.tz.as_deref().map(parse_tz).transpose()?;
    let opts = AnalysisOptions {
        alpha: a.alpha,
        pair_gap_s: a.pair_gap_s,
        min_server_tests: a.min_server_tests,
        min_group_tests: a.min_group_tests,
        rank_tool: a.rank_tool,
        local_tz,
    };
    let file = File::open(&a.input).map_err(|e| usage(format!("{}: {e}", a.input.display())))?;
    let records = read_records(file).map_err(|e| usage(format!("{}: {e}", a.input.display())))?;
    let output = run_analysis(a.analysis, &records, &opts).map_err(usage)?;
    out_dir(&a.out)?;
    let mut written: Vec<PathBuf> = Vec::new();
    for t in &output.tables {
        let path = a.out.join(format!("{}.csv", t.name));
        write_with(&path, |w| t.write_csv(w))?;
        written.push(path);
    }
    let summary = a.out.join(format!("{}_summary.txt", a.analysis.as_str()));
    write_with(&summary, |w| w.write_all(output.summary.as_bytes()))?;
    print!("{}", output.summary);
    for p in written {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}
