use proptest::prelude::*;
use speedlab_core::emulink::*;

fn seg(flow: u32, seq: u64, bytes: u32) -> Segment {
    Segment {
        flow_id: FlowId(flow),
        payload_bytes: bytes,
        seq,
        xmit: seq,
        enqueue_time: 0,
    }
}

fn conserved(s: &LinkStats) -> bool {
    s.enqueued_bytes == s.delivered_bytes + s.dropped_bytes() + s.in_flight_bytes
}

/// Drive a link with `(gap_ns, flow, bytes)` arrivals, then drain it.
fn run(spec: LinkSpec, arrivals: &[(u64, u32, u32)]) -> (Vec<LinkEvent>, LinkState) {
    let mut link = LinkState::new(spec).unwrap();
    let mut events = Vec::new();
    let mut now = 0;
    for (i, &(gap, flow, bytes)) in arrivals.iter().enumerate() {
        now += gap;
        link.advance_into(now, &mut events);
        if let Some(ev) = link.enqueue(seg(flow, i as u64, bytes), now).unwrap() {
            events.push(ev);
        }
        assert!(conserved(&link.stats()));
    }
    link.advance_into(now + 100 * NANOS_PER_SEC, &mut events);
    (events, link)
}

fn arb_spec() -> impl Strategy<Value = LinkSpec> {
    (1e5..1e9f64, 0.0..0.2f64, 0.0..0.3f64, 1u64..200, any::<u64>()).prop_map(
        |(cap, rtt, loss, queue_segs, seed)| {
            LinkSpec::new(cap, rtt)
                .with_loss(loss)
                .with_queue_bytes(queue_segs * DEFAULT_MSS as u64)
                .with_seed(seed)
        },
    )
}

fn arb_arrivals() -> impl Strategy<Value = Vec<(u64, u32, u32)>> {
    prop::collection::vec((0u64..200_000, 0u32..4, 1u32..=DEFAULT_MSS), 1..400)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bytes_are_conserved(spec in arb_spec(), arrivals in arb_arrivals()) {
        let (_, link) = run(spec, &arrivals);
        let s = link.stats();
        prop_assert!(conserved(&s));
        prop_assert_eq!(s.in_flight_bytes, 0);
    }

    #[test]
    fn same_seed_same_events(spec in arb_spec(), arrivals in arb_arrivals()) {
        let (a, _) = run(spec.clone(), &arrivals);
        let (b, _) = run(spec, &arrivals);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn events_come_out_in_time_order(spec in arb_spec(), arrivals in arb_arrivals()) {
        let (events, _) = run(spec, &arrivals);
        // queue drops are reported at enqueue time, everything else by advance
        let timed: Vec<_> = events
            .iter()
            .filter(|e| e.kind != LinkEventKind::DroppedQueue)
            .map(|e| e.time)
            .collect();
        prop_assert!(timed.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn each_flow_is_delivered_in_order(spec in arb_spec(), arrivals in arb_arrivals()) {
        let (events, _) = run(spec, &arrivals);
        for flow in 0..4 {
            let seqs: Vec<u64> = events
                .iter()
                .filter(|e| e.kind == LinkEventKind::Delivered && e.segment.flow_id == FlowId(flow))
                .map(|e| e.segment.seq)
                .collect();
            prop_assert!(seqs.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn delivery_rate_never_exceeds_capacity(spec in arb_spec(), arrivals in arb_arrivals()) {
        let (events, _) = run(spec.clone(), &arrivals);
        let deliveries: Vec<(Nanos, u64)> = events
            .iter()
            .filter(|e| e.kind == LinkEventKind::Delivered)
            .map(|e| (e.time, e.segment.payload_bytes as u64))
            .collect();
        let window = 10 * spec.serialization_nanos(spec.mss);
        for (i, &(start, _)) in deliveries.iter().enumerate() {
            let bytes: u64 = deliveries[i..]
                .iter()
                .take_while(|(t, _)| *t < start + window)
                .map(|(_, b)| b)
                .sum();
            let allowance = spec.capacity_bits_per_s / 8.0 * window as f64 / 1e9;
            prop_assert!(bytes as f64 <= allowance + spec.mss as f64 + 1e-6);
        }
    }

    #[test]
    fn every_ack_follows_its_delivery(spec in arb_spec(), arrivals in arb_arrivals()) {
        let (events, _) = run(spec.clone(), &arrivals);
        let delivered = events.iter().filter(|e| e.kind == LinkEventKind::Delivered).count();
        let acked = events.iter().filter(|e| e.kind == LinkEventKind::AckDelivered).count();
        prop_assert_eq!(delivered, acked);
    }
}

#[test]
fn saturating_sender_fills_one_second() {
    let spec = LinkSpec::new(100e6, 0.0).with_queue_bytes(20_000_000);
    let mut link = LinkState::new(spec).unwrap();
    for i in 0..10_000 {
        assert!(link.enqueue(seg(0, i, 1460), 0).unwrap().is_none());
    }
    let delivered: u64 = link
        .advance(NANOS_PER_SEC)
        .iter()
        .filter(|e| e.kind == LinkEventKind::Delivered)
        .map(|e| e.segment.payload_bytes as u64)
        .sum();
    let full = 12_500_000.0;
    assert!(delivered as f64 >= 0.99 * full, "{delivered}");
    assert!(delivered as f64 <= full, "{delivered}");
}

#[test]
fn loss_count_is_binomial() {
    let n = 10_000u64;
    let p = 0.02;
    let spec = LinkSpec::new(1e9, 0.0).with_loss(p).with_queue_bytes(n * 1460);
    let mut link = LinkState::new(spec).unwrap();
    for i in 0..n {
        link.enqueue(seg(0, i, 1460), 0).unwrap();
    }
    let lost = link
        .advance(100 * NANOS_PER_SEC)
        .iter()
        .filter(|e| e.kind == LinkEventKind::DroppedLoss)
        .count() as f64;
    let mean = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((lost - mean).abs() <= 3.0 * sigma, "lost {lost}");
}

#[test]
fn certain_loss_drops_everything() {
    let spec = LinkSpec::new(1e8, 0.01).with_loss(1.0);
    let (events, link) = run(spec, &[(1000, 0, 1460); 50]);
    assert!(events.iter().all(|e| e.kind == LinkEventKind::DroppedLoss));
    assert_eq!(link.stats().dropped_loss_segments, 50);
}
