use speedlab_core::emulink::{secs_to_nanos, FlowId, LinkSpec};
use speedlab_core::transport::{
    CongestionAlgo, ConnectionConfig, SimNetwork, DEFAULT_SERVER_SEND_BUFFER_BYTES,
};
use speedlab_core::Direction;

const MBPS: f64 = 1e6;

fn network(cap: f64, rtt: f64, loss: f64, seed: u64) -> SimNetwork {
    SimNetwork::symmetric(LinkSpec::new(cap, rtt).with_loss(loss).with_seed(seed)).unwrap()
}

fn acked(net: &SimNetwork, id: FlowId) -> u64 {
    net.counters(id).unwrap().1
}

/// Goodput of one flow over `secs` seconds, as a fraction of capacity.
fn goodput(cca: CongestionAlgo, dir: Direction, cap: f64, rtt: f64, loss: f64, secs: f64) -> f64 {
    let mut net = network(cap, rtt, loss, 1);
    let mut cfg = ConnectionConfig::new(cca).with_seed(1);
    if dir == Direction::Down {
        cfg = cfg.with_send_buffer(DEFAULT_SERVER_SEND_BUFFER_BYTES);
    }
    let id = net.open(dir, cfg);
    net.run_until(secs_to_nanos(secs)).unwrap();
    acked(&net, id) as f64 * 8.0 / secs / cap
}

#[test]
fn counters_start_at_zero() {
    let mut net = network(100.0 * MBPS, 0.01, 0.0, 1);
    let id = net.open(Direction::Down, ConnectionConfig::new(CongestionAlgo::Cubic));
    assert_eq!(net.counters(id), Some((0, 0)));
    let conn = net.connection(id).unwrap();
    assert_eq!(conn.bytes_written_app, 0);
    assert_eq!(conn.bytes_acked, 0);
}

/// Per-flow share of capacity between 10 s and `end_s`.
fn fair_shares(cca: CongestionAlgo, n: usize, end_s: f64) -> Vec<f64> {
    let cap = 100.0 * MBPS;
    let mut net = network(cap, 0.02, 0.0, 7);
    let ids: Vec<FlowId> = (0..n)
        .map(|i| {
            let cfg = ConnectionConfig::new(cca)
                .with_seed(i as u64 + 1)
                .with_send_buffer(DEFAULT_SERVER_SEND_BUFFER_BYTES);
            net.open(Direction::Down, cfg)
        })
        .collect();
    net.run_until(secs_to_nanos(10.0)).unwrap();
    let start: Vec<u64> = ids.iter().map(|&id| acked(&net, id)).collect();
    net.run_until(secs_to_nanos(end_s)).unwrap();
    ids.iter()
        .zip(start)
        .map(|(&id, s)| (acked(&net, id) - s) as f64 * 8.0 / (end_s - 10.0) / cap)
        .collect()
}

#[test]
fn two_bbr_flows_split_the_link() {
    for share in fair_shares(CongestionAlgo::BbrModel, 2, 30.0) {
        assert!((share - 0.5).abs() <= 0.1, "{share}");
        assert!((share - 0.5).abs() <= 0.5 * 0.15, "{share}");
    }
}

#[test]
fn two_cubic_flows_split_the_link() {
    for share in fair_shares(CongestionAlgo::Cubic, 2, 30.0) {
        assert!((share - 0.5).abs() <= 0.5 * 0.15, "{share}");
    }
}

#[test]
fn three_flows_each_get_a_third() {
    for cca in [CongestionAlgo::BbrModel, CongestionAlgo::Cubic] {
        // drop-tail keeps CUBIC losses synchronized, so shares swing over
        // tens of seconds; a minute evens them out
        for share in fair_shares(cca, 3, 70.0) {
            assert!((share - 1.0 / 3.0).abs() <= 0.15 / 3.0, "{cca:?} {share}");
        }
    }
}

#[test]
fn cubic_collapses_under_loss() {
    let g = goodput(
        CongestionAlgo::Cubic,
        Direction::Up,
        100.0 * MBPS,
        0.01,
        0.02,
        10.0,
    );
    assert!(g <= 0.5, "{g}");
}

#[test]
fn cubic_goodput_falls_with_loss() {
    let g: Vec<f64> = [0.0, 0.005, 0.01, 0.02, 0.05]
        .iter()
        .map(|&p| {
            goodput(
                CongestionAlgo::Cubic,
                Direction::Down,
                100.0 * MBPS,
                0.01,
                p,
                10.0,
            )
        })
        .collect();
    assert!(g.windows(2).all(|w| w[1] <= w[0]), "{g:?}");
}

#[test]
fn bbr_saturates_zero_delay_link() {
    let g = goodput(
        CongestionAlgo::BbrModel,
        Direction::Down,
        100.0 * MBPS,
        0.0,
        0.0,
        10.0,
    );
    assert!(g >= 0.95, "{g}");
}

#[test]
fn bbr_ignores_random_loss() {
    for rtt in [0.01, 0.05] {
        let clean = goodput(
            CongestionAlgo::BbrModel,
            Direction::Down,
            100.0 * MBPS,
            rtt,
            0.0,
            10.0,
        );
        for p in [0.01, 0.02, 0.05] {
            let lossy = goodput(
                CongestionAlgo::BbrModel,
                Direction::Down,
                100.0 * MBPS,
                rtt,
                p,
                10.0,
            );
            assert!(
                (clean - lossy).abs() / clean < 0.05,
                "rtt {rtt} loss {p}: {clean} vs {lossy}"
            );
        }
    }
}

#[test]
fn send_buffer_bounds_unacked_bytes() {
    let cap = 1 << 20;
    let mut net = network(0.5 * MBPS, 0.02, 0.0, 1);
    let id = net.open(
        Direction::Up,
        ConnectionConfig::new(CongestionAlgo::Cubic).with_send_buffer(cap),
    );
    for step in 1..=100 {
        net.run_until(secs_to_nanos(step as f64 * 0.1)).unwrap();
        let (written, acked) = net.counters(id).unwrap();
        assert!(acked <= written);
        assert!(written - acked <= cap, "{written} {acked}");
    }
}

#[test]
fn counters_are_monotone_and_ordered() {
    for cca in [CongestionAlgo::Cubic, CongestionAlgo::BbrModel] {
        let mut net = network(20.0 * MBPS, 0.04, 0.02, 3);
        let id = net.open(Direction::Down, ConnectionConfig::new(cca));
        let mut last = (0, 0);
        for step in 1..=200 {
            net.run_until(secs_to_nanos(step as f64 * 0.025)).unwrap();
            let now = net.counters(id).unwrap();
            assert!(now.1 <= now.0);
            assert!(now.0 >= last.0 && now.1 >= last.1);
            last = now;
        }
    }
}

#[test]
fn finite_transfer_completes() {
    let size = 3_000_000;
    for cca in [CongestionAlgo::Cubic, CongestionAlgo::BbrModel] {
        let mut net = network(50.0 * MBPS, 0.02, 0.0, 1);
        let id = net.open(
            Direction::Up,
            ConnectionConfig::new(cca).with_transfer_bytes(size),
        );
        net.run_until(secs_to_nanos(10.0)).unwrap();
        let (written, acked) = net.counters(id).unwrap();
        assert_eq!(written, acked);
        assert!(acked > size - 1460 && acked <= size, "{acked}");
    }
}

#[test]
fn same_seed_same_trajectory() {
    let trace = |seed| {
        let mut net = network(50.0 * MBPS, 0.03, 0.01, seed);
        let a = net.open(
            Direction::Down,
            ConnectionConfig::new(CongestionAlgo::BbrModel).with_seed(seed),
        );
        let b = net.open(
            Direction::Down,
            ConnectionConfig::new(CongestionAlgo::Cubic).with_seed(seed),
        );
        (1..=40)
            .map(|k| {
                net.run_until(secs_to_nanos(k as f64 * 0.1)).unwrap();
                (net.counters(a).unwrap(), net.counters(b).unwrap())
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(trace(5), trace(5));
    assert_ne!(trace(5), trace(6));
}
