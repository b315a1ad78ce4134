use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use speedlab_core::engines::{
    run_engine, AccountingMode, AdaptivePolicy, EngineError, EngineKind, ProviderError, TransportProvider,
};
use speedlab_core::Direction;
use speedlab_wire::frame::{self, close_frame};
use speedlab_wire::{
    client_run, spawn_server, CounterReport, Frame, FrameType, ServerConfig, SessionResult, Start,
    WireProvider, MAX_PAYLOAD,
};

/// Socket tests share one CPU budget; run them one at a time so throughput
/// comparisons are not skewed by each other.
fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn server() -> SocketAddr {
    static ADDR: OnceLock<SocketAddr> = OnceLock::new();
    *ADDR.get_or_init(|| spawn_server("127.0.0.1:0", ServerConfig::default()).unwrap())
}

/// Loopback throughput of a plain TCP blast with no framing, measured once.
fn baseline_bps() -> f64 {
    static BPS: OnceLock<f64> = OnceLock::new();
    *BPS.get_or_init(|| {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        thread::spawn(move || {
            let (mut s, _) = l.accept().unwrap();
            let buf = vec![0u8; 64 * 1024];
            while s.write_all(&buf).is_ok() {}
        });
        let mut c = TcpStream::connect(addr).unwrap();
        let mut buf = vec![0u8; 64 * 1024];
        let t0 = Instant::now();
        let mut bytes = 0u64;
        while t0.elapsed() < Duration::from_secs(4) {
            bytes += c.read(&mut buf).unwrap() as u64;
        }
        bytes as f64 * 8.0 / t0.elapsed().as_secs_f64()
    })
}

fn frame_type() -> impl Strategy<Value = FrameType> {
    prop::sample::select(FrameType::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn frame_round_trip(kind in frame_type(), payload in prop::collection::vec(any::<u8>(), 0..4096)) {
        let f = Frame::new(kind, payload);
        let bytes = f.encode().unwrap();
        prop_assert_eq!(bytes.len(), 5 + f.payload.len());
        prop_assert_eq!(Frame::decode(&bytes).unwrap(), f);
    }

    #[test]
    fn frame_streams_round_trip(frames in prop::collection::vec(
        (frame_type(), prop::collection::vec(any::<u8>(), 0..256)), 0..16)) {
        let mut buf = Vec::new();
        for (k, p) in &frames {
            Frame::new(*k, p.clone()).write_to(&mut buf).unwrap();
        }
        let mut cur = &buf[..];
        for (k, p) in &frames {
            let f = Frame::read_from(&mut cur).unwrap().unwrap();
            prop_assert_eq!(f.kind, *k);
            prop_assert_eq!(&f.payload, p);
        }
        prop_assert!(Frame::read_from(&mut cur).unwrap().is_none());
    }

    #[test]
    fn counter_and_result_payloads_round_trip(t in 0.0f64..1e6, a in any::<u64>(), b in any::<u64>()) {
        let c = CounterReport { t_offset_s: t, bytes_received_cum: a };
        prop_assert_eq!(CounterReport::from_frame(&Frame::decode(&c.to_frame().encode().unwrap()).unwrap()).unwrap(), c);
        let r = SessionResult { bytes_received: a, bytes_sent: b };
        prop_assert_eq!(SessionResult::from_frame(&Frame::decode(&r.to_frame().encode().unwrap()).unwrap()).unwrap(), r);
    }

    #[test]
    fn unknown_types_never_decode(t in 6u8..=255, len in 0u32..16) {
        let mut bytes = len.to_be_bytes().to_vec();
        bytes.push(t);
        bytes.extend(std::iter::repeat_n(0u8, len as usize));
        prop_assert!(Frame::decode(&bytes).is_err());
        prop_assert!(Frame::decode(&[&len.to_be_bytes()[..], &[0u8]].concat()).is_err());
    }
}

#[test]
fn largest_frame_round_trips() {
    let f = Frame::new(FrameType::Data, vec![0xAB; MAX_PAYLOAD as usize]);
    assert_eq!(Frame::decode(&f.encode().unwrap()).unwrap(), f);
}

fn connect_raw() -> TcpStream {
    let s = TcpStream::connect(server()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    s
}

#[test]
fn start_then_close_returns_zero_result() {
    let _guard = exclusive();
    let mut s = connect_raw();
    Start {
        direction: Direction::Up,
        engine: EngineKind::SingleStream,
    }
    .to_frame()
    .write_to(&mut s)
    .unwrap();
    close_frame().write_to(&mut s).unwrap();
    let result = loop {
        let f = Frame::read_from(&mut s)
            .unwrap()
            .expect("server hung up before RESULT");
        if f.kind == FrameType::Result {
            break SessionResult::from_frame(&f).unwrap();
        }
        assert_eq!(f.kind, FrameType::CounterReport);
    };
    assert_eq!(result, SessionResult::default());
}

#[test]
fn upload_counter_reports_are_monotone() {
    let _guard = exclusive();
    let mut s = connect_raw();
    Start {
        direction: Direction::Up,
        engine: EngineKind::SingleStream,
    }
    .to_frame()
    .write_to(&mut s)
    .unwrap();
    let mut w = s.try_clone().unwrap();
    let writer = thread::spawn(move || {
        let payload = vec![1u8; 32 * 1024];
        let t0 = Instant::now();
        while t0.elapsed() < Duration::from_millis(1600) {
            frame::write_data(&mut w, &payload).unwrap();
        }
        close_frame().write_to(&mut w).unwrap();
    });
    let mut reports = Vec::new();
    let result = loop {
        let f = Frame::read_from(&mut s).unwrap().unwrap();
        match f.kind {
            FrameType::CounterReport => reports.push(CounterReport::from_frame(&f).unwrap()),
            FrameType::Result => break SessionResult::from_frame(&f).unwrap(),
            k => panic!("unexpected {k:?}"),
        }
    };
    writer.join().unwrap();
    assert!(reports.len() >= 5, "{} reports", reports.len());
    for w in reports.windows(2) {
        assert!(w[1].t_offset_s >= w[0].t_offset_s);
        assert!(w[1].bytes_received_cum >= w[0].bytes_received_cum);
    }
    // Reports come at the 250 ms cadence.
    let gap = reports[2].t_offset_s - reports[1].t_offset_s;
    assert!((0.2..0.35).contains(&gap), "{gap}");
    assert_eq!(reports.last().unwrap().bytes_received_cum, result.bytes_received);
    assert!(result.bytes_received > 0);
}

#[test]
fn oversized_frame_kills_only_its_own_session() {
    let _guard = exclusive();
    let mut good = WireProvider::new(server(), EngineKind::SingleStream).unwrap();
    let c = good.open(Direction::Down).unwrap();

    let mut bad = connect_raw();
    Start {
        direction: Direction::Up,
        engine: EngineKind::SingleStream,
    }
    .to_frame()
    .write_to(&mut bad)
    .unwrap();
    let mut hdr = (2 * MAX_PAYLOAD).to_be_bytes().to_vec();
    hdr.push(FrameType::Data as u8);
    bad.write_all(&hdr).unwrap();
    // The server drops the session: the stream ends (possibly after reports).
    let mut sink = [0u8; 4096];
    let t0 = Instant::now();
    loop {
        match bad.read(&mut sink) {
            Ok(0) | Err(_) => break,
            Ok(_) => assert!(t0.elapsed() < Duration::from_secs(5), "session not terminated"),
        }
    }

    let t = good.now_s();
    good.advance_to(t + 0.5).unwrap();
    good.close(c);
    let r = good.server_result(c).expect("good session completed");
    assert!(r.bytes_sent > 0);
}

#[test]
fn two_simultaneous_sessions_both_complete() {
    let _guard = exclusive();
    let handles: Vec<_> = [Direction::Down, Direction::Up]
        .into_iter()
        .map(|dir| {
            thread::spawn(move || {
                let mut p = WireProvider::new(server(), EngineKind::SingleStream).unwrap();
                let c = p.open(dir).unwrap();
                p.advance_to(1.0).unwrap();
                p.close(c);
                (dir, p.server_result(c))
            })
        })
        .collect();
    for h in handles {
        let (dir, r) = h.join().unwrap();
        let r = r.expect("RESULT received");
        match dir {
            Direction::Down => assert!(r.bytes_sent > 0),
            Direction::Up => assert!(r.bytes_received > 0),
        }
    }
}

#[test]
fn unreachable_endpoint_is_a_connect_error() {
    let _guard = exclusive();
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let err = client_run(
        addr,
        EngineKind::SingleStream,
        Direction::Down,
        AccountingMode::ReceiverAcked,
        &AdaptivePolicy::default(),
    )
    .unwrap_err();
    match err {
        EngineError::Aborted {
            source: ProviderError::Connect(_),
            partial_samples,
        } => {
            assert!(partial_samples.is_empty())
        }
        other => panic!("{other}"),
    }
}

#[test]
fn mid_test_disconnect_keeps_partial_samples() {
    let _guard = exclusive();
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    thread::spawn(move || {
        let (mut s, _) = l.accept().unwrap();
        let _ = Frame::read_from(&mut s).unwrap();
        let t0 = Instant::now();
        let payload = vec![0u8; 16 * 1024];
        while t0.elapsed() < Duration::from_millis(900) {
            frame::write_data(&mut s, &payload).unwrap();
            thread::sleep(Duration::from_millis(5));
        }
        drop(s);
    });
    let err = client_run(
        addr,
        EngineKind::SingleStream,
        Direction::Down,
        AccountingMode::ReceiverAcked,
        &AdaptivePolicy::default(),
    )
    .unwrap_err();
    assert!(matches!(err, EngineError::Aborted { .. }), "{err}");
    let n = err.partial_samples().len();
    assert!((2..40).contains(&n), "{n} partial samples");
}

#[test]
fn loopback_download_matches_baseline_and_server_totals() {
    let _guard = exclusive();
    let base = baseline_bps();
    let mut p = WireProvider::new(server(), EngineKind::SingleStream).unwrap();
    let r = run_engine(
        EngineKind::SingleStream,
        &mut p,
        Direction::Down,
        AccountingMode::ReceiverAcked,
        &AdaptivePolicy::default(),
    )
    .unwrap();
    let server = p.server_result(0).expect("RESULT received");
    let local = p.local_bytes(0).unwrap().receiver_acked_bytes;
    println!(
        "baseline {:.3e} bps, reported {:.3e} bps, client {} B at end of test, {} B after drain, server sent {} B",
        base, r.reported_bits_per_s, r.totals.receiver_acked, local, server.bytes_sent
    );
    assert!(local.abs_diff(server.bytes_sent) <= 1 << 20);
    assert!(r.totals.receiver_acked <= local);
    assert!((r.reported_bits_per_s - base).abs() / base <= 0.10);
}

#[test]
fn loopback_upload_app_counter_leads_acked() {
    let _guard = exclusive();
    for accounting in [AccountingMode::SenderApp, AccountingMode::ReceiverAcked] {
        let r = client_run(
            server(),
            EngineKind::SingleStream,
            Direction::Up,
            accounting,
            &AdaptivePolicy::default(),
        )
        .unwrap();
        assert!(r.totals.sender_app >= r.totals.receiver_acked, "{:?}", r.totals);
        assert!(r.totals.receiver_acked > 0);
        assert_eq!(r.accounting, accounting);
    }
}
