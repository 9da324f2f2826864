use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, UdpSocket};
use std::time::{Duration, Instant};

use iotecs_core::cloud::{start, CloudConfig, CloudError, CloudHandle, ControlClient};
use iotecs_core::dsl::Protocol;
use iotecs_core::time::wall_now_ns;
use iotecs_core::wire::{encode_packet, PacketHeader};

fn cloud(protocol: Protocol, compute_ns: u64) -> CloudHandle {
    let mut c = CloudConfig::new(protocol, 0);
    c.compute_ns = compute_ns;
    start(&c).unwrap()
}

fn packet(seq: u32, payload: &[u8]) -> Vec<u8> {
    let h = PacketHeader {
        node_id: 2,
        edge_id: 5,
        device_id: 1,
        step_index: 0,
        seq,
        send_timestamp_ns: wall_now_ns(),
        payload_len: payload.len() as u16,
    };
    let mut out = Vec::new();
    encode_packet(&h, payload, &mut out);
    out
}

fn udp_client() -> UdpSocket {
    let s = UdpSocket::bind("127.0.0.1:0").unwrap();
    s.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    s
}

#[test]
fn udp_echo_is_byte_identical() {
    let c = cloud(Protocol::Udp, 0);
    let s = udp_client();
    let pkt = packet(0, b"23C");
    s.send_to(&pkt, c.data_addr()).unwrap();
    let mut buf = [0u8; 256];
    let n = s.recv(&mut buf).unwrap();
    assert_eq!(&buf[..n], &pkt[..]);
    let mut ctl = ControlClient::connect(c.control_addr()).unwrap();
    let snap = ctl.snapshot().unwrap();
    assert_eq!(
        (
            snap.packets_received,
            snap.packets_processed,
            snap.responses_sent
        ),
        (1, 1, 1)
    );
    assert_eq!(snap.per_source["2/5"], 1);
    assert_eq!(snap.trans_time_ns.len(), 1);
}

#[test]
fn tcp_echo_is_byte_identical() {
    let c = cloud(Protocol::Tcp, 0);
    let mut s = TcpStream::connect(c.data_addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    let a = packet(0, &[7u8; 100]);
    let b = packet(1, b"");
    let mut both = a.clone();
    both.extend_from_slice(&b);
    s.write_all(&both[..40]).unwrap();
    std::thread::sleep(Duration::from_millis(30));
    s.write_all(&both[40..]).unwrap();
    let mut got = vec![0u8; both.len()];
    s.read_exact(&mut got).unwrap();
    assert_eq!(got, both);
}

#[test]
fn malformed_datagram_is_counted_and_dropped() {
    let c = cloud(Protocol::Udp, 0);
    let s = udp_client();
    s.set_read_timeout(Some(Duration::from_millis(200)))
        .unwrap();
    s.send_to(&[1, 2, 3], c.data_addr()).unwrap();
    let mut buf = [0u8; 64];
    assert!(s.recv(&mut buf).is_err());
    let snap = ControlClient::connect(c.control_addr())
        .unwrap()
        .snapshot()
        .unwrap();
    assert_eq!(snap.malformed, 1);
    assert_eq!(snap.packets_received, 0);
}

#[test]
fn snapshot_after_ten_echoes_and_monotone_counters() {
    let c = cloud(Protocol::Udp, 0);
    let mut ctl = ControlClient::connect(c.control_addr()).unwrap();
    let epoch = ctl.reset().unwrap();
    assert!(epoch.abs_diff(wall_now_ns()) < 1_000_000_000);
    let s = udp_client();
    let mut buf = [0u8; 64];
    let mut last = ctl.snapshot().unwrap();
    for i in 0..10 {
        s.send_to(&packet(i, b"x"), c.data_addr()).unwrap();
        s.recv(&mut buf).unwrap();
        let snap = ctl.snapshot().unwrap();
        assert!(snap.packets_received >= last.packets_received);
        assert!(snap.responses_sent >= last.responses_sent);
        assert!(snap.responses_sent <= snap.packets_processed);
        assert!(snap.packets_processed <= snap.packets_received);
        last = snap;
    }
    assert_eq!(last.packets_received, 10);
    assert_eq!(last.responses_sent, 10);
}

#[test]
fn packets_stamped_before_reset_are_stale() {
    let c = cloud(Protocol::Udp, 0);
    let old = packet(0, b"x");
    let mut ctl = ControlClient::connect(c.control_addr()).unwrap();
    std::thread::sleep(Duration::from_millis(2));
    ctl.reset().unwrap();
    let s = udp_client();
    s.send_to(&old, c.data_addr()).unwrap();
    std::thread::sleep(Duration::from_millis(100));
    let snap = ctl.snapshot().unwrap();
    assert_eq!((snap.packets_received, snap.stale), (0, 1));
}

#[test]
fn unknown_command_keeps_connection_open_and_stop_exits() {
    let c = cloud(Protocol::Udp, 0);
    let stream = TcpStream::connect(c.control_addr()).unwrap();
    let mut w = stream.try_clone().unwrap();
    let mut r = BufReader::new(stream);
    let mut line = String::new();
    w.write_all(b"JUMP\n").unwrap();
    r.read_line(&mut line).unwrap();
    assert!(line.contains("\"error\""), "{line}");
    line.clear();
    w.write_all(b"{\"cmd\":\"RESET\"}\n").unwrap();
    r.read_line(&mut line).unwrap();
    assert!(line.contains("epoch_ns"), "{line}");
    line.clear();
    w.write_all(b"STOP\n").unwrap();
    r.read_line(&mut line).unwrap();
    assert!(line.contains("true"));
    let t = Instant::now();
    c.wait();
    assert!(t.elapsed() < Duration::from_secs(2));
}

#[test]
fn throughput_is_capped_by_compute_time() {
    let c = cloud(Protocol::Udp, 10_000_000);
    let s = udp_client();
    let start = Instant::now();
    for i in 0..40 {
        s.send_to(&packet(i, b"x"), c.data_addr()).unwrap();
    }
    std::thread::sleep(Duration::from_millis(200));
    let snap = ControlClient::connect(c.control_addr())
        .unwrap()
        .snapshot()
        .unwrap();
    let cap = start.elapsed().as_nanos() as u64 / 10_000_000 + 1;
    assert!(
        snap.packets_processed <= cap,
        "{} > {cap}",
        snap.packets_processed
    );
    assert!(snap.packets_processed >= 5);
    assert_eq!(snap.compute_ns, 10_000_000);
    assert_eq!(snap.workers, 1);
}

#[test]
fn busy_port_fails_to_bind() {
    let c = cloud(Protocol::Tcp, 0);
    let mut cfg = CloudConfig::new(Protocol::Tcp, c.data_addr().port());
    cfg.control_port = 0;
    assert!(matches!(
        start(&cfg),
        Err(CloudError::Bind { what: "data", .. })
    ));
    let mut same = CloudConfig::new(Protocol::Udp, 4000);
    same.control_port = 4000;
    assert!(matches!(start(&same), Err(CloudError::Config(_))));
}

#[test]
fn udp_receive_buffer_is_reported() {
    let mut cfg = CloudConfig::new(Protocol::Udp, 0);
    cfg.udp_recv_buf = Some(1 << 20);
    let c = start(&cfg).unwrap();
    let snap = ControlClient::connect(c.control_addr())
        .unwrap()
        .snapshot()
        .unwrap();
    assert!(snap.udp_recv_buf.unwrap() >= 1 << 20);
}
