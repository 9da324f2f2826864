use std::io::{self, Read, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use socket2::{Domain, Socket, Type};
use thiserror::Error;

use super::control::serve_control;
use super::stats::{Admit, SnapshotMeta, Stats};
use crate::dsl::Protocol;
use crate::runtime::busy_compute;
use crate::time::wall_now_ns;
use crate::wire::{FrameBuffer, PacketHeader, MAX_UDP_DATAGRAM};

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloudConfig {
    pub protocol: Protocol,
    pub bind: IpAddr,
    /// Data port; 0 picks a free one.
    pub port: u16,
    /// Control port; 0 picks a free one.
    pub control_port: u16,
    pub compute_ns: u64,
    pub workers: usize,
    /// Requested SO_RCVBUF for the UDP socket, in bytes.
    pub udp_recv_buf: Option<usize>,
}

impl CloudConfig {
    pub fn new(protocol: Protocol, port: u16) -> Self {
        CloudConfig {
            protocol,
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port,
            control_port: if port == 0 { 0 } else { port.wrapping_add(1) },
            compute_ns: 0,
            workers: 1,
            udp_recv_buf: None,
        }
    }

    pub fn check(&self) -> Result<(), CloudError> {
        if self.port != 0 && self.port == self.control_port {
            return Err(CloudError::Config(format!(
                "data and control port are both {}",
                self.port
            )));
        }
        if self.workers == 0 {
            return Err(CloudError::Config("workers must be at least 1".into()));
        }
        if self.protocol == Protocol::Mqtt {
            return Err(CloudError::Config(
                "MQTT not supported by the baseline cloud".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("invalid cloud config: {0}")]
    Config(String),
    #[error("cannot bind {what} socket on {addr}")]
    Bind {
        what: &'static str,
        addr: SocketAddr,
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) struct Shared {
    pub stats: Stats,
    pub meta: SnapshotMeta,
    pub stop: AtomicBool,
}

/// A running baseline cloud.
pub struct CloudHandle {
    data_addr: SocketAddr,
    control_addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl CloudHandle {
    pub fn data_addr(&self) -> SocketAddr {
        self.data_addr
    }

    pub fn control_addr(&self) -> SocketAddr {
        self.control_addr
    }

    /// Effective receive buffer of the UDP socket, if UDP.
    pub fn udp_recv_buf(&self) -> Option<usize> {
        self.shared.meta.udp_recv_buf
    }

    pub fn is_stopped(&self) -> bool {
        self.shared.stop.load(Ordering::SeqCst)
    }

    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }

    /// Blocks until a STOP arrives (or [`stop`](Self::stop) is called) and
    /// all threads have finished.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(self) {
        self.stop();
        self.wait();
    }
}

impl Drop for CloudHandle {
    fn drop(&mut self) {
        self.stop();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Binds both sockets and starts serving in background threads.
pub fn start(config: &CloudConfig) -> Result<CloudHandle, CloudError> {
    config.check()?;
    let data = SocketAddr::new(config.bind, config.port);
    let control = SocketAddr::new(config.bind, config.control_port);

    enum Data {
        Udp(UdpSocket),
        Tcp(TcpListener),
    }
    let (data_sock, udp_recv_buf) = match config.protocol {
        Protocol::Tcp => {
            let l = TcpListener::bind(data).map_err(|source| CloudError::Bind {
                what: "data",
                addr: data,
                source,
            })?;
            (Data::Tcp(l), None)
        }
        _ => {
            let (sock, buf) =
                bind_udp(data, config.udp_recv_buf).map_err(|source| CloudError::Bind {
                    what: "data",
                    addr: data,
                    source,
                })?;
            (Data::Udp(sock), Some(buf))
        }
    };
    let control_listener = TcpListener::bind(control).map_err(|source| CloudError::Bind {
        what: "control",
        addr: control,
        source,
    })?;

    let shared = Arc::new(Shared {
        stats: Stats::default(),
        meta: SnapshotMeta {
            compute_ns: config.compute_ns,
            workers: config.workers,
            udp_recv_buf,
            protocol: config.protocol,
        },
        stop: AtomicBool::new(false),
    });
    shared.stats.reset(0);

    let mut threads = Vec::new();
    let data_addr = match data_sock {
        Data::Udp(sock) => {
            let addr = sock.local_addr()?;
            sock.set_read_timeout(Some(POLL))?;
            for w in 0..config.workers {
                let s = sock.try_clone()?;
                let sh = shared.clone();
                threads.push(
                    thread::Builder::new()
                        .name(format!("udp-worker-{w}"))
                        .spawn(move || udp_worker(s, &sh))?,
                );
            }
            addr
        }
        Data::Tcp(listener) => {
            let addr = listener.local_addr()?;
            listener.set_nonblocking(true)?;
            let sh = shared.clone();
            threads.push(
                thread::Builder::new()
                    .name("tcp-accept".into())
                    .spawn(move || tcp_accept(listener, sh))?,
            );
            addr
        }
    };
    let control_addr = control_listener.local_addr()?;
    control_listener.set_nonblocking(true)?;
    let sh = shared.clone();
    threads.push(
        thread::Builder::new()
            .name("control".into())
            .spawn(move || serve_control(control_listener, sh))?,
    );

    Ok(CloudHandle {
        data_addr,
        control_addr,
        shared,
        threads,
    })
}

/// Runs a cloud in the foreground until STOP.
pub fn serve(config: &CloudConfig) -> Result<(), CloudError> {
    start(config)?.wait();
    Ok(())
}

fn bind_udp(addr: SocketAddr, recv_buf: Option<usize>) -> io::Result<(UdpSocket, usize)> {
    let socket = Socket::new(Domain::for_address(addr), Type::DGRAM, None)?;
    if let Some(size) = recv_buf {
        socket.set_recv_buffer_size(size)?;
    }
    socket.bind(&addr.into())?;
    let effective = socket.recv_buffer_size()?;
    Ok((socket.into(), effective))
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
    )
}

fn udp_worker(sock: UdpSocket, shared: &Shared) {
    let mut buf = vec![0u8; MAX_UDP_DATAGRAM + 64];
    while !shared.stop.load(Ordering::SeqCst) {
        let (n, from) = match sock.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if is_timeout(&e) => continue,
            Err(_) => continue,
        };
        let packet = &buf[..n];
        let header = match PacketHeader::decode_datagram(packet) {
            Ok(h) => h,
            Err(_) => {
                shared.stats.malformed();
                continue;
            }
        };
        if let Admit::Stale =
            shared
                .stats
                .admit(header.node_id, header.edge_id, header.send_timestamp_ns)
        {
            continue;
        }
        busy_compute(shared.meta.compute_ns);
        shared
            .stats
            .processed(header.send_timestamp_ns, wall_now_ns());
        let ok = sock.send_to(packet, from).is_ok();
        shared.stats.sent(ok);
    }
}

/// Limits how many connections compute at once.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) {
        let mut f = self.free.lock().unwrap();
        while *f == 0 {
            f = self.cv.wait(f).unwrap();
        }
        *f -= 1;
    }

    fn release(&self) {
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

fn tcp_accept(listener: TcpListener, shared: Arc<Shared>) {
    let permits = Arc::new(Permits {
        free: Mutex::new(shared.meta.workers),
        cv: Condvar::new(),
    });
    let mut conns = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let sh = shared.clone();
                let p = permits.clone();
                if let Ok(h) = thread::Builder::new()
                    .name("tcp-conn".into())
                    .spawn(move || tcp_conn(stream, &sh, &p))
                {
                    conns.push(h);
                }
                conns.retain(|h: &JoinHandle<()>| !h.is_finished());
            }
            Err(e) if is_timeout(&e) => thread::sleep(POLL / 4),
            Err(_) => thread::sleep(POLL / 4),
        }
    }
    for h in conns {
        let _ = h.join();
    }
}

fn tcp_conn(mut stream: TcpStream, shared: &Shared, permits: &Permits) {
    if stream.set_nonblocking(false).is_err()
        || stream.set_read_timeout(Some(POLL)).is_err()
        || stream
            .set_write_timeout(Some(Duration::from_secs(1)))
            .is_err()
        || stream.set_nodelay(true).is_err()
    {
        return;
    }
    let mut frames = FrameBuffer::new();
    let mut chunk = vec![0u8; 64 * 1024];
    let mut packet = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => frames.push(&chunk[..n]),
            Err(e) if is_timeout(&e) || e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => return,
        }
        loop {
            let header = match frames.next_frame(&mut packet) {
                Ok(Some(h)) => h,
                Ok(None) => break,
                Err(_) => {
                    // framing is lost; drop the connection
                    shared.stats.malformed();
                    return;
                }
            };
            if let Admit::Stale =
                shared
                    .stats
                    .admit(header.node_id, header.edge_id, header.send_timestamp_ns)
            {
                continue;
            }
            permits.acquire();
            busy_compute(shared.meta.compute_ns);
            permits.release();
            shared
                .stats
                .processed(header.send_timestamp_ns, wall_now_ns());
            let ok = stream.write_all(&packet).is_ok();
            shared.stats.sent(ok);
            if !ok {
                return;
            }
        }
    }
}
