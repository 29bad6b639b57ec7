//! Bit-exact datagram codec for the publish-subscribe engine.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic 0x57 0x54 ('WT') | version u8 = 1 | kind u8 | sender u32
//! topic: u8 length + UTF-8 bytes
//! kind-specific body:
//!   DATA      { seq u64, payload: u32 length + bytes }
//!   HEARTBEAT { first u64, last u64 }
//!   ACKNACK   { ack_floor u64, missing count u16, missing seqs u64 x n }
//!   ANNOUNCE  { node u32, topic count u8, topics (u8 length + UTF-8 each) }
//! ```
//!
//! The `sender` header field is the participant the packet originates from:
//! the writer node for DATA/HEARTBEAT, the reader node for ACKNACK, the
//! announcing node for ANNOUNCE. ANNOUNCE is not topic-scoped and carries an
//! empty header topic. A datagram never exceeds [`MAX_DATAGRAM`] bytes.

use thiserror::Error;

pub const MAGIC: [u8; 2] = [0x57, 0x54];
pub const VERSION: u8 = 1;
/// Largest UDP payload over IPv4.
pub const MAX_DATAGRAM: usize = 65_507;

const KIND_DATA: u8 = 1;
const KIND_HEARTBEAT: u8 = 2;
const KIND_ACKNACK: u8 = 3;
const KIND_ANNOUNCE: u8 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown packet kind {0}")]
    BadKind(u8),
    #[error("truncated packet at offset {0}")]
    Truncated(usize),
    #[error("invalid UTF-8 in topic at offset {0}")]
    BadTopic(usize),
    #[error("trailing {0} bytes after packet body")]
    TrailingBytes(usize),
    #[error("packet does not fit a datagram: {0} > {MAX_DATAGRAM}")]
    Oversize(usize),
    #[error("field out of range: {0}")]
    FieldRange(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PacketBody {
    Data { seq: u64, payload: Vec<u8> },
    Heartbeat { first: u64, last: u64 },
    AckNack { ack_floor: u64, missing: Vec<u64> },
    Announce { node: u32, topics: Vec<String> },
}

impl PacketBody {
    pub fn kind(&self) -> u8 {
        match self {
            PacketBody::Data { .. } => KIND_DATA,
            PacketBody::Heartbeat { .. } => KIND_HEARTBEAT,
            PacketBody::AckNack { .. } => KIND_ACKNACK,
            PacketBody::Announce { .. } => KIND_ANNOUNCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub sender: u32,
    pub topic: String,
    pub body: PacketBody,
}

impl Packet {
    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.body.kind());
        out.extend_from_slice(&self.sender.to_le_bytes());
        push_topic(&mut out, &self.topic)?;
        match &self.body {
            PacketBody::Data { seq, payload } => {
                out.extend_from_slice(&seq.to_le_bytes());
                if payload.len() > u32::MAX as usize {
                    return Err(WireError::FieldRange("payload length"));
                }
                out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
                out.extend_from_slice(payload);
            }
            PacketBody::Heartbeat { first, last } => {
                out.extend_from_slice(&first.to_le_bytes());
                out.extend_from_slice(&last.to_le_bytes());
            }
            PacketBody::AckNack { ack_floor, missing } => {
                out.extend_from_slice(&ack_floor.to_le_bytes());
                if missing.len() > u16::MAX as usize {
                    return Err(WireError::FieldRange("missing count"));
                }
                out.extend_from_slice(&(missing.len() as u16).to_le_bytes());
                for seq in missing {
                    out.extend_from_slice(&seq.to_le_bytes());
                }
            }
            PacketBody::Announce { node, topics } => {
                out.extend_from_slice(&node.to_le_bytes());
                if topics.len() > u8::MAX as usize {
                    return Err(WireError::FieldRange("topic count"));
                }
                out.push(topics.len() as u8);
                for t in topics {
                    push_topic(&mut out, t)?;
                }
            }
        }
        if out.len() > MAX_DATAGRAM {
            return Err(WireError::Oversize(out.len()));
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Packet, WireError> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(2)? != MAGIC {
            return Err(WireError::BadMagic);
        }
        let version = c.u8()?;
        if version != VERSION {
            return Err(WireError::BadVersion(version));
        }
        let kind = c.u8()?;
        let sender = c.u32()?;
        let topic = c.topic()?;
        let body = match kind {
            KIND_DATA => {
                let seq = c.u64()?;
                let len = c.u32()? as usize;
                let payload = c.take(len)?.to_vec();
                PacketBody::Data { seq, payload }
            }
            KIND_HEARTBEAT => PacketBody::Heartbeat { first: c.u64()?, last: c.u64()? },
            KIND_ACKNACK => {
                let ack_floor = c.u64()?;
                let n = c.u16()? as usize;
                let mut missing = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    missing.push(c.u64()?);
                }
                PacketBody::AckNack { ack_floor, missing }
            }
            KIND_ANNOUNCE => {
                let node = c.u32()?;
                let n = c.u8()? as usize;
                let mut topics = Vec::with_capacity(n);
                for _ in 0..n {
                    topics.push(c.topic()?);
                }
                PacketBody::Announce { node, topics }
            }
            other => return Err(WireError::BadKind(other)),
        };
        if c.pos != bytes.len() {
            return Err(WireError::TrailingBytes(bytes.len() - c.pos));
        }
        Ok(Packet { sender, topic, body })
    }
}

fn push_topic(out: &mut Vec<u8>, topic: &str) -> Result<(), WireError> {
    if topic.len() > u8::MAX as usize {
        return Err(WireError::FieldRange("topic length"));
    }
    out.push(topic.len() as u8);
    out.extend_from_slice(topic.as_bytes());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.bytes.len() {
            return Err(WireError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn topic(&mut self) -> Result<String, WireError> {
        let at = self.pos;
        let len = self.u8()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| WireError::BadTopic(at))
    }
}
