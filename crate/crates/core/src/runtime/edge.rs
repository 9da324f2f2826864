use std::io;
use std::thread;
use std::time::{Duration, Instant};

use super::clock::StepClock;
use super::compute::busy_compute;
use super::ledger::EdgeLedger;
use super::payload::make_payload;
use super::transport::{Inbound, Link, Received};
use super::TimeBase;
use crate::dsl::Speed;
use crate::time::sleep_until;
use crate::topology::{edge_expected_sends, EdgeInstance};
use crate::wire::{encode_packet, PacketHeader, HEADER_LEN};

/// Everything an edge needs besides its transport.
#[derive(Debug, Clone)]
pub struct EdgeRun<'a> {
    pub node_id: u16,
    pub edge: &'a EdgeInstance,
    pub step_ns: u64,
    pub step_count: u64,
    pub time_base: TimeBase,
    /// Cloud clock minus local clock, applied to send timestamps.
    pub clock_offset_ns: i64,
    /// Receiving stops here (run end plus drain window).
    pub receive_until: Instant,
    pub seed: u64,
}

#[derive(Debug, Default)]
struct SendOutcome {
    attempted: u64,
    actual: u64,
    breaks: u64,
    gap_sum_ns: u64,
    gap_count: u64,
    lateness_ns: u64,
    failure: Option<String>,
}

#[derive(Debug, Default)]
struct RecvOutcome {
    /// First-seen responses as (seq, rtt).
    firsts: Vec<(u32, Option<u64>)>,
    duplicates: u64,
    unexpected: u64,
    corrupt: u64,
    failure: Option<String>,
}

/// Runs one edge device to completion and returns its ledger entry.
///
/// `link` is the already-established transport, or the error from setting it
/// up; in the latter case every due send is counted as attempted but not
/// sent and the failure is recorded.
pub fn run_edge_device(run: &EdgeRun<'_>, link: io::Result<Link>) -> EdgeLedger {
    let edge = run.edge;
    let payloads: Vec<Vec<u8>> = edge
        .devices
        .iter()
        .map(|d| make_payload(run.node_id, edge.edge_id, d, run.seed))
        .collect();

    let mut ledger = EdgeLedger::default();
    let (link, inbound) = match link.and_then(|l| l.receiver().map(|r| (l, r))) {
        Ok((l, r)) => (Some(l), Some(r)),
        Err(e) => {
            ledger.failure = Some(format!("transport setup: {e}"));
            (None, None)
        }
    };

    let (sent, recv, busy) = thread::scope(|s| {
        let payloads = &payloads;
        let compute = (edge.workload_ns > 0).then(|| s.spawn(|| compute_loop(run)));
        let receiver = inbound.map(|rx| s.spawn(move || receive_loop(run, rx, payloads)));
        let sent = send_loop(run, link, payloads);
        let recv = receiver.map(|h| h.join().expect("receiver thread panicked"));
        let busy = compute.map(|h| h.join().expect("compute thread panicked"));
        (sent, recv.unwrap_or_default(), busy.unwrap_or(0))
    });

    ledger.attempted_sends = sent.attempted;
    ledger.actual_sends = sent.actual;
    ledger.step_budget_breaks = sent.breaks;
    ledger.send_gap_sum_ns = sent.gap_sum_ns;
    ledger.send_gap_count = sent.gap_count;
    ledger.max_step_lateness_ns = sent.lateness_ns;
    ledger.compute_busy_ns = busy;
    ledger.duplicate_responses = recv.duplicates;
    ledger.corrupt_responses = recv.corrupt;
    ledger.unexpected_responses = recv.unexpected;
    for (seq, rtt) in recv.firsts {
        if (seq as u64) < sent.actual {
            ledger.responses_received += 1;
            ledger.rtt_samples_ns.extend(rtt);
        } else {
            ledger.unexpected_responses += 1;
        }
    }
    ledger.failure = ledger.failure.take().or(sent.failure).or(recv.failure);
    ledger
}

fn send_loop(run: &EdgeRun<'_>, mut link: Option<Link>, payloads: &[Vec<u8>]) -> SendOutcome {
    let edge = run.edge;
    let step = Duration::from_nanos(run.step_ns);
    let pause = match edge.speed {
        Speed::Max => None,
        Speed::PerStep(n) => Some(Duration::from_nanos(run.step_ns / n.max(1) as u64)),
    };
    let mut clock = StepClock::new(run.time_base.epoch, step, run.step_count);
    let mut out = SendOutcome::default();
    let mut seq: u32 = 0;
    let mut packet = Vec::with_capacity(HEADER_LEN + 64);
    let mut due = Vec::with_capacity(edge.devices.len());

    for i in 0..run.step_count {
        due.clear();
        due.extend(
            edge.devices
                .iter()
                .enumerate()
                .filter(|(_, d)| i % d.period_steps as u64 == 0)
                .map(|(k, _)| k),
        );
        out.attempted += due.len() as u64;
        let Some(l) = link.as_mut() else {
            continue;
        };
        let start = clock.wait_for_step(i).expect("steps are awaited in order");
        let mut sent_here = 0usize;
        let mut first_send: Option<Instant> = None;
        let mut last_send: Option<Instant> = None;
        for (k, &dev) in due.iter().enumerate() {
            if start.elapsed() >= step {
                break;
            }
            let device = &edge.devices[dev];
            let payload = &payloads[dev];
            let header = PacketHeader {
                node_id: run.node_id,
                edge_id: edge.edge_id,
                device_id: device.device_id,
                step_index: i as u32,
                seq,
                send_timestamp_ns: run.time_base.stamp(run.clock_offset_ns),
                payload_len: payload.len() as u16,
            };
            encode_packet(&header, payload, &mut packet);
            let now = Instant::now();
            if let Err(e) = l.send(&packet) {
                out.failure = Some(format!("send at step {i}: {e}"));
                link = None;
                break;
            }
            if let Some(prev) = last_send {
                out.gap_sum_ns += (now - prev).as_nanos() as u64;
                out.gap_count += 1;
            }
            last_send = Some(now);
            let first = *first_send.get_or_insert(now);
            seq += 1;
            sent_here += 1;

            if let Some(p) = pause {
                if k + 1 == due.len() {
                    break;
                }
                // Targets are anchored to the first send so OS wake-up
                // overshoot does not accumulate across a step.
                let target = first + p * sent_here as u32;
                if target.saturating_duration_since(start) >= step {
                    break;
                }
                sleep_until(target);
            }
        }
        if sent_here < due.len() {
            out.breaks += 1;
        }
        out.actual += sent_here as u64;
    }
    out.lateness_ns = clock.max_lateness().as_nanos() as u64;
    out
}

fn receive_loop(run: &EdgeRun<'_>, mut rx: Inbound, payloads: &[Vec<u8>]) -> RecvOutcome {
    let edge = run.edge;
    let bound = edge_expected_sends(run.step_count, edge);
    let mut seen = vec![0u64; (bound as usize).div_ceil(64)];
    let first_device = edge.devices.first().map_or(0, |d| d.device_id);
    let mut out = RecvOutcome::default();
    let mut buf = Vec::new();
    while Instant::now() < run.receive_until {
        let header = match rx.recv(&mut buf) {
            Ok(Received::Packet(h)) => h,
            Ok(Received::Garbage) => {
                out.unexpected += 1;
                continue;
            }
            Ok(Received::Idle) => continue,
            Ok(Received::Closed) => break,
            Err(e) => {
                out.failure = Some(format!("receive: {e}"));
                break;
            }
        };
        // device ids are assigned contiguously within an edge
        let dev = header.device_id.wrapping_sub(first_device) as usize;
        if header.node_id != run.node_id
            || header.edge_id != edge.edge_id
            || dev >= payloads.len()
            || edge.devices[dev].device_id != header.device_id
            || header.seq as u64 >= bound
        {
            out.unexpected += 1;
            continue;
        }
        if buf[HEADER_LEN..] != payloads[dev][..] {
            out.corrupt += 1;
            continue;
        }
        let (w, b) = (header.seq as usize / 64, header.seq % 64);
        if seen[w] & (1 << b) != 0 {
            out.duplicates += 1;
            continue;
        }
        seen[w] |= 1 << b;
        let now = run.time_base.stamp(run.clock_offset_ns);
        let rtt = now.checked_sub(header.send_timestamp_ns);
        out.firsts.push((header.seq, rtt));
    }
    out
}

fn compute_loop(run: &EdgeRun<'_>) -> u64 {
    let step = Duration::from_nanos(run.step_ns);
    let mut clock = StepClock::new(run.time_base.epoch, step, run.step_count);
    let mut busy = 0u64;
    for i in 0..run.step_count {
        clock.wait_for_step(i).expect("steps are awaited in order");
        busy += busy_compute(run.edge.workload_ns).as_nanos() as u64;
    }
    busy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{CloudSpec, Payload, Protocol, Span};
    use crate::topology::DeviceInstance;
    use crate::wire::MAX_UDP_DATAGRAM;
    use std::net::{SocketAddr, TcpListener, UdpSocket};
    use std::sync::{Arc, Mutex};

    fn edge(protocol: Protocol, speed: Speed, periods: &[u32], port: u16) -> EdgeInstance {
        EdgeInstance {
            edge_id: 4,
            type_name: "E".into(),
            protocol,
            speed,
            workload_ns: 0,
            cloud: CloudSpec {
                name: "C".into(),
                ip: [127, 0, 0, 1].into(),
                port,
                span: Span::default(),
            },
            devices: periods
                .iter()
                .enumerate()
                .map(|(i, &p)| DeviceInstance {
                    device_id: 10 + i as u16,
                    type_name: "D".into(),
                    period_steps: p,
                    payload: Payload::Literal(vec![i as u8; 4]),
                })
                .collect(),
            span: Span::default(),
        }
    }

    /// Echoes every datagram and logs (step, device) pairs.
    fn reflector() -> (SocketAddr, Arc<Mutex<Vec<(u32, u16)>>>) {
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        sock.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        let addr = sock.local_addr().unwrap();
        let log = Arc::new(Mutex::new(Vec::new()));
        let log2 = log.clone();
        thread::spawn(move || {
            let mut buf = vec![0u8; MAX_UDP_DATAGRAM];
            while let Ok((n, from)) = sock.recv_from(&mut buf) {
                let h = PacketHeader::decode_datagram(&buf[..n]).unwrap();
                log2.lock().unwrap().push((h.step_index, h.device_id));
                let _ = sock.send_to(&buf[..n], from);
            }
        });
        (addr, log)
    }

    fn run_for(
        edge: &EdgeInstance,
        step_ms: u64,
        steps: u64,
        link: io::Result<Link>,
    ) -> EdgeLedger {
        let tb = TimeBase::at_unix(crate::time::wall_now_ns() + 20_000_000);
        let run = EdgeRun {
            node_id: 1,
            edge,
            step_ns: step_ms * 1_000_000,
            step_count: steps,
            time_base: tb,
            clock_offset_ns: 0,
            receive_until: tb.epoch + Duration::from_millis(step_ms * (steps + 2)),
            seed: 9,
        };
        run_edge_device(&run, link)
    }

    fn open(e: &EdgeInstance) -> io::Result<Link> {
        Link::open(
            e.protocol,
            SocketAddr::from((e.cloud.ip, e.cloud.port)),
            Duration::from_secs(1),
        )
    }

    #[test]
    fn periods_follow_the_step_schedule() {
        let (addr, log) = reflector();
        let e = edge(Protocol::Udp, Speed::Max, &[1, 2, 3], addr.port());
        let l = run_for(&e, 50, 3, open(&e));
        assert_eq!(
            (l.attempted_sends, l.actual_sends, l.responses_received),
            (6, 6, 6)
        );
        assert_eq!(l.rtt_samples_ns.len(), 6);
        assert_eq!(l.failure, None);
        let got = log.lock().unwrap().clone();
        assert_eq!(
            got,
            vec![(0, 10), (0, 11), (0, 12), (1, 10), (2, 10), (2, 11)]
        );
    }

    #[test]
    fn pacing_gap_matches_speed() {
        let (addr, _) = reflector();
        let e = edge(Protocol::Udp, Speed::PerStep(10), &[1; 10], addr.port());
        let l = run_for(&e, 200, 1, open(&e));
        assert_eq!(l.actual_sends, 10);
        let gap = l.mean_send_gap_ns().unwrap();
        assert!((20e6..=25e6).contains(&gap), "{gap}");
    }

    #[test]
    fn step_budget_break_counts_shortfall() {
        let (addr, _) = reflector();
        // 25 ms pauses in a 50 ms step leave room for two sends
        let e = edge(Protocol::Udp, Speed::PerStep(2), &[1; 10], addr.port());
        let l = run_for(&e, 50, 3, open(&e));
        assert_eq!(l.attempted_sends, 30);
        assert_eq!(l.actual_sends, 6);
        assert_eq!(l.step_budget_breaks, 3);
        assert_eq!(l.responses_received, 6);
    }

    #[test]
    fn refused_tcp_counts_everything_as_unsent() {
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let e = edge(Protocol::Tcp, Speed::Max, &[1, 2], port);
        let l = run_for(&e, 20, 4, open(&e));
        assert_eq!(
            (l.attempted_sends, l.actual_sends, l.responses_received),
            (6, 0, 0)
        );
        assert!(l.failure.unwrap().contains("transport setup"));
    }

    #[test]
    fn tcp_echo_and_workload() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut r = s.try_clone().unwrap();
            let _ = std::io::copy(&mut r, &mut s);
        });
        let mut e = edge(Protocol::Tcp, Speed::Max, &[1, 1], port);
        e.workload_ns = 5_000_000;
        let l = run_for(&e, 30, 4, open(&e));
        assert_eq!(
            (l.attempted_sends, l.actual_sends, l.responses_received),
            (8, 8, 8)
        );
        assert!(l.compute_busy_ns >= 20_000_000);
        assert_eq!(
            l.corrupt_responses + l.duplicate_responses + l.unexpected_responses,
            0
        );
    }

    #[test]
    fn duplicate_and_foreign_echoes_are_not_counted() {
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        let addr = sock.local_addr().unwrap();
        thread::spawn(move || {
            let mut buf = vec![0u8; 2048];
            while let Ok((n, from)) = sock.recv_from(&mut buf) {
                let _ = sock.send_to(&buf[..n], from);
                let _ = sock.send_to(&buf[..n], from);
                let mut bad = buf[..n].to_vec();
                *bad.last_mut().unwrap() ^= 0xff;
                let _ = sock.send_to(&bad, from);
                bad[4] ^= 1; // other edge
                let _ = sock.send_to(&bad, from);
            }
        });
        let e = edge(Protocol::Udp, Speed::Max, &[1], addr.port());
        let l = run_for(&e, 30, 2, open(&e));
        assert_eq!(l.responses_received, 2);
        assert_eq!(l.duplicate_responses, 2);
        assert_eq!(l.corrupt_responses, 2);
        assert_eq!(l.unexpected_responses, 2);
    }
}
