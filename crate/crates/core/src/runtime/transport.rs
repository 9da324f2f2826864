use std::io::{self, Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpStream, UdpSocket};
use std::time::Duration;

use crate::dsl::Protocol;
use crate::wire::{FrameBuffer, PacketHeader, MAX_UDP_DATAGRAM};

/// How long a receive call blocks before giving the caller a chance to check
/// its deadline.
pub const RECV_POLL: Duration = Duration::from_millis(20);

/// Sending half of an edge's connection to its cloud.
#[derive(Debug)]
pub enum Link {
    Udp { socket: UdpSocket, peer: SocketAddr },
    Tcp(TcpStream),
}

impl Link {
    pub fn open(
        protocol: Protocol,
        peer: SocketAddr,
        connect_timeout: Duration,
    ) -> io::Result<Self> {
        match protocol {
            Protocol::Udp => {
                let socket = UdpSocket::bind((Ipv4Addr::UNSPECIFIED, 0))?;
                Ok(Link::Udp { socket, peer })
            }
            Protocol::Tcp => {
                let stream = TcpStream::connect_timeout(&peer, connect_timeout)?;
                stream.set_nodelay(true)?;
                Ok(Link::Tcp(stream))
            }
            Protocol::Mqtt => Err(io::Error::new(
                io::ErrorKind::Unsupported,
                "MQTT not supported by runtime",
            )),
        }
    }

    pub fn send(&mut self, packet: &[u8]) -> io::Result<()> {
        match self {
            Link::Udp { socket, peer } => {
                let n = socket.send_to(packet, *peer)?;
                if n != packet.len() {
                    return Err(io::Error::new(io::ErrorKind::WriteZero, "short datagram"));
                }
                Ok(())
            }
            Link::Tcp(stream) => stream.write_all(packet),
        }
    }

    /// A receiving half sharing the same socket.
    pub fn receiver(&self) -> io::Result<Inbound> {
        match self {
            Link::Udp { socket, .. } => {
                let s = socket.try_clone()?;
                s.set_read_timeout(Some(RECV_POLL))?;
                Ok(Inbound::Udp(s, vec![0u8; MAX_UDP_DATAGRAM + 64]))
            }
            Link::Tcp(stream) => {
                let s = stream.try_clone()?;
                s.set_read_timeout(Some(RECV_POLL))?;
                Ok(Inbound::Tcp(s, FrameBuffer::new(), vec![0u8; 64 * 1024]))
            }
        }
    }
}

#[derive(Debug)]
pub enum Received {
    Packet(PacketHeader),
    /// Bytes arrived that do not form a valid packet.
    Garbage,
    /// Nothing within the poll interval.
    Idle,
    /// The peer closed the stream.
    Closed,
}

#[derive(Debug)]
pub enum Inbound {
    Udp(UdpSocket, Vec<u8>),
    Tcp(TcpStream, FrameBuffer, Vec<u8>),
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
    )
}

impl Inbound {
    /// Waits up to [`RECV_POLL`] for one packet, written to `out` whole.
    pub fn recv(&mut self, out: &mut Vec<u8>) -> io::Result<Received> {
        match self {
            Inbound::Udp(socket, buf) => match socket.recv_from(buf) {
                Ok((n, _)) => match PacketHeader::decode_datagram(&buf[..n]) {
                    Ok(h) => {
                        out.clear();
                        out.extend_from_slice(&buf[..n]);
                        Ok(Received::Packet(h))
                    }
                    Err(_) => Ok(Received::Garbage),
                },
                Err(e) if is_timeout(&e) => Ok(Received::Idle),
                // ICMP port-unreachable surfaces here on some platforms
                Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => Ok(Received::Idle),
                Err(e) => Err(e),
            },
            Inbound::Tcp(stream, frames, buf) => loop {
                match frames.next_frame(out) {
                    Ok(Some(h)) => return Ok(Received::Packet(h)),
                    Ok(None) => {}
                    Err(_) => return Ok(Received::Closed),
                }
                match stream.read(buf) {
                    Ok(0) => return Ok(Received::Closed),
                    Ok(n) => frames.push(&buf[..n]),
                    Err(e) if is_timeout(&e) => return Ok(Received::Idle),
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                    Err(e) if e.kind() == io::ErrorKind::ConnectionReset => {
                        return Ok(Received::Closed)
                    }
                    Err(e) => return Err(e),
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::encode_packet;
    use std::net::TcpListener;

    fn header(seq: u32, len: u16) -> PacketHeader {
        PacketHeader {
            node_id: 1,
            edge_id: 2,
            device_id: 0,
            step_index: 0,
            seq,
            send_timestamp_ns: 5,
            payload_len: len,
        }
    }

    #[test]
    fn udp_roundtrip_through_reflector() {
        let reflector = UdpSocket::bind("127.0.0.1:0").unwrap();
        let addr = reflector.local_addr().unwrap();
        let mut link = Link::open(Protocol::Udp, addr, Duration::from_secs(1)).unwrap();
        let mut rx = link.receiver().unwrap();
        let mut pkt = Vec::new();
        encode_packet(&header(7, 2), b"hi", &mut pkt);
        link.send(&pkt).unwrap();
        let mut buf = [0u8; 128];
        let (n, from) = reflector.recv_from(&mut buf).unwrap();
        reflector.send_to(&buf[..n], from).unwrap();
        reflector.send_to(b"junk", from).unwrap();
        let mut out = Vec::new();
        assert!(matches!(rx.recv(&mut out).unwrap(), Received::Packet(h) if h.seq == 7));
        assert_eq!(out, pkt);
        assert!(matches!(rx.recv(&mut out).unwrap(), Received::Garbage));
        assert!(matches!(rx.recv(&mut out).unwrap(), Received::Idle));
    }

    #[test]
    fn tcp_refused_is_an_error() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        drop(l);
        assert!(Link::open(Protocol::Tcp, addr, Duration::from_millis(500)).is_err());
    }

    #[test]
    fn tcp_reads_frames_across_segments() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        let link = Link::open(Protocol::Tcp, addr, Duration::from_secs(1)).unwrap();
        let mut rx = link.receiver().unwrap();
        let (mut server, _) = l.accept().unwrap();
        let mut pkt = Vec::new();
        encode_packet(&header(1, 3), b"abc", &mut pkt);
        server.write_all(&pkt[..10]).unwrap();
        let mut out = Vec::new();
        assert!(matches!(rx.recv(&mut out).unwrap(), Received::Idle));
        server.write_all(&pkt[10..]).unwrap();
        assert!(matches!(rx.recv(&mut out).unwrap(), Received::Packet(h) if h.seq == 1));
        drop(server);
        assert!(matches!(rx.recv(&mut out).unwrap(), Received::Closed));
    }
}
