//! Fixed big-endian packet header shared by the edge runtime and the
//! baseline cloud.
//!
//! ```text
//! offset size field
//!      0    2 magic "EC"
//!      2    1 version (1)
//!      3    2 node id
//!      5    2 edge id
//!      7    2 device id
//!      9    4 step index
//!     13    4 seq (per edge, starts at 0)
//!     17    8 send timestamp, ns on the cloud-aligned wall clock
//!     25    2 payload length
//!     27      payload
//! ```
//!
//! The same framing is used for UDP datagrams and TCP streams; on TCP the
//! header is self-delimiting through the payload length.

use std::io::{self, Read};

use thiserror::Error;

pub const MAGIC: [u8; 2] = *b"EC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 27;
pub const MAX_PAYLOAD_LEN: usize = u16::MAX as usize;
/// Largest UDP payload over IPv4.
pub const MAX_UDP_DATAGRAM: usize = 65_507;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PacketHeader {
    pub node_id: u16,
    pub edge_id: u16,
    pub device_id: u16,
    pub step_index: u32,
    pub seq: u32,
    pub send_timestamp_ns: u64,
    pub payload_len: u16,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("packet shorter than header ({0} bytes)")]
    Truncated(usize),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("payload length {declared} does not match {actual} bytes present")]
    LengthMismatch { declared: usize, actual: usize },
}

impl PacketHeader {
    pub fn encode(&self, out: &mut [u8; HEADER_LEN]) {
        out[0..2].copy_from_slice(&MAGIC);
        out[2] = VERSION;
        out[3..5].copy_from_slice(&self.node_id.to_be_bytes());
        out[5..7].copy_from_slice(&self.edge_id.to_be_bytes());
        out[7..9].copy_from_slice(&self.device_id.to_be_bytes());
        out[9..13].copy_from_slice(&self.step_index.to_be_bytes());
        out[13..17].copy_from_slice(&self.seq.to_be_bytes());
        out[17..25].copy_from_slice(&self.send_timestamp_ns.to_be_bytes());
        out[25..27].copy_from_slice(&self.payload_len.to_be_bytes());
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        self.encode(&mut buf);
        buf
    }

    /// Decodes the header at the start of `buf`; trailing bytes are ignored.
    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        if buf.len() < HEADER_LEN {
            return Err(WireError::Truncated(buf.len()));
        }
        if buf[0..2] != MAGIC {
            return Err(WireError::BadMagic([buf[0], buf[1]]));
        }
        if buf[2] != VERSION {
            return Err(WireError::BadVersion(buf[2]));
        }
        let u16_at = |i: usize| u16::from_be_bytes([buf[i], buf[i + 1]]);
        let u32_at = |i: usize| u32::from_be_bytes(buf[i..i + 4].try_into().unwrap());
        Ok(PacketHeader {
            node_id: u16_at(3),
            edge_id: u16_at(5),
            device_id: u16_at(7),
            step_index: u32_at(9),
            seq: u32_at(13),
            send_timestamp_ns: u64::from_be_bytes(buf[17..25].try_into().unwrap()),
            payload_len: u16_at(25),
        })
    }

    /// Decodes a complete datagram, checking the declared payload length.
    pub fn decode_datagram(buf: &[u8]) -> Result<Self, WireError> {
        let h = Self::decode(buf)?;
        let actual = buf.len() - HEADER_LEN;
        if actual != h.payload_len as usize {
            return Err(WireError::LengthMismatch {
                declared: h.payload_len as usize,
                actual,
            });
        }
        Ok(h)
    }
}

/// Assembles header and payload into one buffer.
pub fn encode_packet(header: &PacketHeader, payload: &[u8], out: &mut Vec<u8>) {
    debug_assert_eq!(header.payload_len as usize, payload.len());
    out.clear();
    out.extend_from_slice(&header.to_bytes());
    out.extend_from_slice(payload);
}

/// Reads one framed packet from a stream into `buf` (header + payload).
///
/// Returns `Ok(None)` on clean EOF before any header byte.
pub fn read_frame<R: Read>(reader: &mut R, buf: &mut Vec<u8>) -> io::Result<Option<PacketHeader>> {
    buf.clear();
    buf.resize(HEADER_LEN, 0);
    let mut filled = 0;
    while filled < HEADER_LEN {
        match reader.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let header =
        PacketHeader::decode(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    buf.resize(HEADER_LEN + header.payload_len as usize, 0);
    reader.read_exact(&mut buf[HEADER_LEN..])?;
    Ok(Some(header))
}

/// Incremental framer for byte streams read with timeouts.
///
/// Bytes are appended as they arrive; complete frames are popped in order.
#[derive(Debug, Default)]
pub struct FrameBuffer {
    buf: Vec<u8>,
    start: usize,
}

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start == self.buf.len() {
            self.buf.clear();
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes buffered but not yet returned as frames.
    pub fn pending(&self) -> usize {
        self.buf.len() - self.start
    }

    /// Pops the next complete frame (header + payload) into `out`.
    ///
    /// A corrupt header poisons the stream: framing cannot recover, so the
    /// caller should drop the connection.
    pub fn next_frame(&mut self, out: &mut Vec<u8>) -> Result<Option<PacketHeader>, WireError> {
        let avail = &self.buf[self.start..];
        if avail.len() < HEADER_LEN {
            return Ok(None);
        }
        let header = PacketHeader::decode(avail)?;
        let total = HEADER_LEN + header.payload_len as usize;
        if avail.len() < total {
            return Ok(None);
        }
        out.clear();
        out.extend_from_slice(&avail[..total]);
        self.start += total;
        if self.start > 1 << 16 {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        Ok(Some(header))
    }
}
