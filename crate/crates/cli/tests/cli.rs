use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn speedlab() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_speedlab"));
    c.env_remove("SPEEDLAB_SEED").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    speedlab().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn help_matches_golden_files() {
    let cases: &[(&str, &[&str])] = &[
        ("speedlab", &[]),
        ("serve", &["serve"]),
        ("test", &["test"]),
        ("matrix", &["matrix"]),
        ("paired", &["paired"]),
        ("generate", &["generate"]),
        ("analyze", &["analyze"]),
        ("figures", &["figures"]),
        ("figures-list", &["figures", "list"]),
        ("figures-run", &["figures", "run"]),
    ];
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for (name, sub) in cases {
        let mut args: Vec<&str> = sub.to_vec();
        args.push("--help");
        let o = run(&args);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        let text = String::from_utf8(o.stdout).unwrap();
        let path = golden_dir().join(format!("{name}.txt"));
        if update {
            fs::write(&path, &text).unwrap();
            continue;
        }
        let want = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(
            text, want,
            "help for {name} changed; rerun with UPDATE_GOLDEN=1 to accept"
        );
    }
}

#[test]
fn help_documents_every_flag() {
    for (sub, flags) in [
        (
            "test",
            &["--server", "--engine", "--direction", "--accounting", "--out"][..],
        ),
        ("matrix", &["--config", "--out", "--reps"][..]),
        (
            "analyze",
            &["--input", "--analysis", "--out", "--tz", "--alpha"][..],
        ),
        ("serve", &["--listen"][..]),
    ] {
        let text = String::from_utf8(run(&[sub, "--help"]).stdout).unwrap();
        for f in flags.iter().chain(&["--seed", "--verbose"]) {
            assert!(text.contains(f), "{sub} --help lacks {f}");
        }
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
    assert_eq!(run(&["matrix"]).status.code(), Some(1));
    let o = run(&["matrix", "--config", "no-such-figure", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fig-latency-download"), "{}", stderr(&o));
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().to_string()).collect()
}

#[test]
fn canned_latency_matrix_covers_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/out");
    let o = run(&[
        "matrix",
        "--config",
        "fig-latency-download.json",
        "--out",
        out.to_str().unwrap(),
        "--reps",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("fig-latency-download.csv")).unwrap();
    let rtts: BTreeSet<u32> = column(&csv, "rtt_ms")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(rtts, BTreeSet::from([0, 50, 100, 200, 400, 500, 600]));
    assert!(out.join("fig-latency-download_summary.csv").is_file());
    assert!(out.join("fig-latency-download_summary.txt").is_file());
}

#[test]
fn bad_configs_exit_1_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    fs::write(&empty, r#"{"name": "e", "sweep": {}}"#).unwrap();
    let o = run(&[
        "matrix",
        "--config",
        empty.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty grid"), "{}", stderr(&o));

    let typo = dir.path().join("typo.json");
    fs::write(&typo, "{\n  \"sweep\": {\n    \"rtt\": [1]\n  }\n}\n").unwrap();
    let o = run(&[
        "matrix",
        "--config",
        typo.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("line 3") && e.contains("rtt"), "{e}");
}

#[test]
fn failed_cells_exit_2_and_still_write_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("partial.json");
    fs::write(
        &cfg,
        r#"{"name": "partial", "repetitions": 1, "base": {"capacity_mbps": 5},
            "combine": {"engine": ["single", "adaptive"]}, "policy": {"max_conns": 0}}"#,
    )
    .unwrap();
    let o = run(&[
        "matrix",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("partial.csv")).unwrap();
    let errors = column(&csv, "error");
    assert_eq!(errors.len(), 2);
    assert_eq!(errors.iter().filter(|e| !e.is_empty()).count(), 1);
}

#[test]
fn seed_override_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, via_env) in [false, true, true].into_iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let mut c = speedlab();
        c.args([
            "matrix",
            "--config",
            "fig-loss-download",
            "--out",
            out.to_str().unwrap(),
            "--reps",
            "2",
        ]);
        if via_env {
            c.env("SPEEDLAB_SEED", "77");
        } else {
            c.args(["--seed", "77"]);
        }
        assert!(c.output().unwrap().status.success());
        outputs.push(fs::read(out.join("fig-loss-download.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
    let csv = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(column(&csv, "seed").iter().all(|s| s == "77" || s == "78"));
}

/// Pairs an hour apart; single-stream 60 s after adaptive.
fn fixture(rows: &[(&str, f64, f64)]) -> String {
    let mut s = String::from("household_id,server_id,timestamp_iso8601,direction,tool,speed_bps\n");
    for (i, (hh, a, single)) in rows.iter().enumerate() {
        let (h, d) = (i % 24, 1 + i / 24);
        s += &format!("{hh},s1,2024-05-{d:02}T{h:02}:00:00Z,down,adaptive,{a}\n");
        s += &format!("{hh},s1,2024-05-{d:02}T{h:02}:01:00Z,down,single,{single}\n");
    }
    s
}

#[test]
fn reldiff_classes_table_matches_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows: Vec<(&str, f64, f64)> = [200.0, 110.0, 102.0, 102.0, 100.0, 98.0, 90.0, 50.0]
        .into_iter()
        .map(|a| ("h1", a, 100.0))
        .collect();
    rows.extend([("h2", 200.0, 100.0); 4]);
    let input = dir.path().join("tests.csv");
    fs::write(&input, fixture(&rows)).unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "analyze",
        "--input",
        input.to_str().unwrap(),
        "--analysis",
        "reldiff-classes",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("reldiff_classes.csv")).unwrap();
    let get = |name: &str| -> Vec<f64> { column(&csv, name).iter().map(|s| s.parse().unwrap()).collect() };
    assert_eq!(column(&csv, "household_id"), ["h1", "h2"]);
    assert_eq!(get("pairs"), [8.0, 4.0]);
    assert_eq!(get("adaptive_higher_high"), [0.125, 1.0]);
    assert_eq!(get("adaptive_higher_medium"), [0.125, 0.0]);
    assert_eq!(get("adaptive_higher_low"), [0.25, 0.0]);
    assert_eq!(get("equal"), [0.125, 0.0]);
    assert_eq!(get("single_higher_low"), [0.125, 0.0]);
    assert_eq!(get("single_higher_medium"), [0.125, 0.0]);
    assert_eq!(get("single_higher_high"), [0.125, 0.0]);
    assert!(out.join("reldiff-classes_summary.txt").is_file());
}

#[test]
fn analyze_input_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let missing = dir.path().join("missing.csv");
    fs::write(
        &missing,
        "household_id,server_id,timestamp_iso8601,direction,tool\nh,s,,down,single\n",
    )
    .unwrap();
    let o = run(&[
        "analyze",
        "--input",
        missing.to_str().unwrap(),
        "--analysis",
        "paired-ttest",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("speed_bps"), "{}", stderr(&o));

    let naive = dir.path().join("naive.csv");
    let text = fixture(&[("h", 100.0, 90.0)]).replace('Z', "");
    fs::write(&naive, text).unwrap();
    let o = run(&[
        "analyze",
        "--input",
        naive.to_str().unwrap(),
        "--analysis",
        "time-of-day",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no timezone"), "{}", stderr(&o));
    // --tz shifts zoned timestamps; it does not make naive ones acceptable.
    let o = run(&[
        "analyze",
        "--input",
        naive.to_str().unwrap(),
        "--analysis",
        "time-of-day",
        "--out",
        out,
        "--tz",
        "-05:00",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let zoned = dir.path().join("zoned.csv");
    fs::write(&zoned, fixture(&[("h", 100.0, 90.0)])).unwrap();
    let o = run(&[
        "analyze",
        "--input",
        zoned.to_str().unwrap(),
        "--analysis",
        "time-of-day",
        "--out",
        out,
        "--tz",
        "-05:00",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&[
        "analyze",
        "--input",
        zoned.to_str().unwrap(),
        "--analysis",
        "time-of-day",
        "--out",
        out,
        "--tz",
        "nowhere",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(&[
        "analyze",
        "--input",
        naive.to_str().unwrap(),
        "--analysis",
        "speed",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    for name in [
        "paired-ttest",
        "reldiff-classes",
        "server-rank",
        "time-of-day",
        "consistency",
    ] {
        assert!(e.contains(name), "{e}");
    }
}

#[test]
fn generate_then_analyze_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("gen");
    let o = run(&[
        "generate",
        "--out",
        g.to_str().unwrap(),
        "--households",
        "2",
        "--degraded",
        "1",
        "--days",
        "1",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let truth = fs::read_to_string(g.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 3);
    let o = run(&[
        "generate",
        "--out",
        g.to_str().unwrap(),
        "--households",
        "2",
        "--degraded",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&[
        "analyze",
        "--input",
        g.join("tests.csv").to_str().unwrap(),
        "--analysis",
        "consistency",
        "--out",
        dir.path().join("a").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("a/consistency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn paired_writes_pairs_that_analyze_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p");
    let o = run(&[
        "paired",
        "--out",
        p.to_str().unwrap(),
        "--reps",
        "3",
        "--capacity-mbps",
        "10",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pairs = fs::read_to_string(p.join("paired.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 4);
    let o = run(&[
        "analyze",
        "--input",
        p.join("tests.csv").to_str().unwrap(),
        "--analysis",
        "reldiff-classes",
        "--out",
        dir.path().join("a").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("a/reldiff_classes.csv")).unwrap();
    assert_eq!(column(&csv, "pairs"), ["3"]);

    let o = run(&["paired", "--out", p.to_str().unwrap(), "--loss", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn figures_run_writes_gnuplot_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "figures",
        "run",
        "fig-cubic-loss-upload",
        "--out",
        dir.path().to_str().unwrap(),
        "--reps",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for ext in ["csv", "dat", "gp"] {
        assert!(
            dir.path().join(format!("fig-cubic-loss-upload.{ext}")).is_file(),
            "{ext}"
        );
    }
    let gp = fs::read_to_string(dir.path().join("fig-cubic-loss-upload.gp")).unwrap();
    assert!(gp.contains("fig-cubic-loss-upload.dat"));
    let o = run(&[
        "figures",
        "run",
        "fig-nope",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let listed = String::from_utf8(run(&["figures", "list"]).stdout).unwrap();
    assert_eq!(listed.lines().count(), 6);
}

#[test]
fn serve_and_test_over_loopback() {
    let mut server = speedlab()
        .args(["serve", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();

    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r/report.json");
    let o = run(&[
        "test",
        "--server",
        &addr,
        "--direction",
        "up",
        "--accounting",
        "app",
        "--out",
        report.to_str().unwrap(),
    ]);
    let _ = server.kill();
    let _ = server.wait();
    assert!(o.status.success(), "{}", stderr(&o));
    let json = fs::read_to_string(&report).unwrap();
    assert!(
        json.contains("\"engine\": \"single\"") && json.contains("\"accounting\": \"app\""),
        "{json}"
    );

    let dead = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .to_string();
    let o = run(&["test", "--server", &dead]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("connect"), "{}", stderr(&o));
}
