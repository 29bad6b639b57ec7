//! Pluggable datagram transports.
//!
//! [`SimChannel`] is a seeded simulated wireless link: per-packet drop
//! probability, base latency plus uniform jitter, optional reordering and an
//! optional bandwidth cap with sender-side FIFO serialization. Same seed and
//! send schedule, same delivery schedule and drop set, always.
//!
//! [`UdpTransport`] carries the same datagrams over real sockets with no
//! delivery guarantees; the engine cannot tell the two apart.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::collections::HashMap;
use std::net::{SocketAddr, UdpSocket};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::MAX_DATAGRAM;
use crate::Tick;

/// Default datagram port.
pub const DEFAULT_PORT: u16 = 7447;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("datagram of {0} bytes exceeds {MAX_DATAGRAM}")]
    OversizeDatagram(usize),
    #[error("unknown destination node {0}")]
    UnknownDestination(u32),
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
}

/// Simulated link parameters. The defaults are declared placeholders for a
/// short indoor Wi-Fi hop, not measured values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    #[serde(default = "default_latency")]
    pub latency_ms: u64,
    /// Uniform jitter bound: delivery moves by U{-jitter..=+jitter} ms.
    #[serde(default = "default_jitter")]
    pub jitter_ms: u64,
    #[serde(default = "default_drop")]
    pub drop_prob: f64,
    /// When false, sender order is preserved even if jitter inverts delivery
    /// times.
    #[serde(default)]
    pub reorder: bool,
    /// Serialization bandwidth cap in bit/s; 0 means unlimited.
    #[serde(default)]
    pub bandwidth_bps: u64,
}

fn default_latency() -> u64 {
    2
}
fn default_jitter() -> u64 {
    1
}
fn default_drop() -> f64 {
    0.001
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            latency_ms: 2,
            jitter_ms: 1,
            drop_prob: 0.001,
            reorder: false,
            bandwidth_bps: 0,
        }
    }
}

impl LinkParams {
    /// A lossless, zero-latency, zero-jitter link.
    pub fn ideal() -> LinkParams {
        LinkParams { latency_ms: 0, jitter_ms: 0, drop_prob: 0.0, reorder: false, bandwidth_bps: 0 }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if !(0.0..=1.0).contains(&self.drop_prob) {
            // Reuse the io error path for config mistakes.
            return Err(TransportError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "drop_prob must be within [0, 1]",
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendStatus {
    Scheduled(Tick),
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub dest: u32,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ChannelStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

struct InFlight {
    deliver_at: Tick,
    send_index: u64,
    dest: u32,
    bytes: Vec<u8>,
}

// Min-heap order: earliest delivery first, ties by send order.
impl Ord for InFlight {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.deliver_at, self.send_index).cmp(&(other.deliver_at, other.send_index))
    }
}
impl PartialOrd for InFlight {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl PartialEq for InFlight {
    fn eq(&self, other: &Self) -> bool {
        (self.deliver_at, self.send_index) == (other.deliver_at, other.send_index)
    }
}
impl Eq for InFlight {}

/// Deterministic simulated point-to-multipoint channel. Owned by the tick
/// loop; single-threaded by construction.
pub struct SimChannel {
    params: LinkParams,
    rng: ChaCha8Rng,
    in_flight: BinaryHeap<Reverse<InFlight>>,
    send_index: u64,
    /// Sender is busy serializing until this tick (bandwidth cap only).
    busy_until: Tick,
    /// Latest delivery tick scheduled so far, for FIFO enforcement.
    last_scheduled: Tick,
    stats: ChannelStats,
}

impl SimChannel {
    pub fn new(params: LinkParams, seed: u64) -> SimChannel {
        SimChannel {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            in_flight: BinaryHeap::new(),
            send_index: 0,
            busy_until: 0,
            last_scheduled: 0,
            stats: ChannelStats::default(),
        }
    }

    pub fn params(&self) -> &LinkParams {
        &self.params
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn in_flight_len(&self) -> usize {
        self.in_flight.len()
    }

    /// Submit a datagram at tick `now`. It is either dropped (counted) or
    /// scheduled for delivery at
    /// `departure + latency + U{-jitter..=+jitter}`, clamped to `now`, where
    /// departure accounts for serialization when a bandwidth cap is set.
    pub fn send(&mut self, dest: u32, bytes: &[u8], now: Tick) -> Result<SendStatus, TransportError> {
        if bytes.len() > MAX_DATAGRAM {
            return Err(TransportError::OversizeDatagram(bytes.len()));
        }
        self.stats.sent += 1;
        if self.params.drop_prob > 0.0 && self.rng.gen_bool(self.params.drop_prob) {
            self.stats.dropped += 1;
            return Ok(SendStatus::Dropped);
        }
        let mut departure = now;
        if self.params.bandwidth_bps > 0 {
            let bits = bytes.len() as u64 * 8;
            let ser_ms = (bits * 1000).div_ceil(self.params.bandwidth_bps);
            departure = self.busy_until.max(now);
            self.busy_until = departure + ser_ms;
        }
        let mut deliver_at = departure + self.params.latency_ms;
        if self.params.jitter_ms > 0 {
            let j = self.params.jitter_ms as i64;
            deliver_at = deliver_at.saturating_add_signed(self.rng.gen_range(-j..=j)).max(now);
        }
        if !self.params.reorder {
            deliver_at = deliver_at.max(self.last_scheduled);
            self.last_scheduled = deliver_at;
        }
        self.in_flight.push(Reverse(InFlight {
            deliver_at,
            send_index: self.send_index,
            dest,
            bytes: bytes.to_vec(),
        }));
        self.send_index += 1;
        Ok(SendStatus::Scheduled(deliver_at))
    }

    /// Take every packet due by `now`, ordered by delivery tick with ties in
    /// send order.
    pub fn poll(&mut self, now: Tick) -> Vec<Delivery> {
        let mut out = Vec::new();
        while let Some(Reverse(head)) = self.in_flight.peek() {
            if head.deliver_at > now {
                break;
            }
            let Reverse(p) = self.in_flight.pop().unwrap();
            self.stats.delivered += 1;
            out.push(Delivery { dest: p.dest, bytes: p.bytes });
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Real sockets
// ---------------------------------------------------------------------------

/// Datagram transport over a non-blocking UDP socket. Byte-for-byte
/// pass-through of the wire format; no delivery guarantees.
pub struct UdpTransport {
    socket: UdpSocket,
    peers: HashMap<u32, SocketAddr>,
    recv_buf: Vec<u8>,
}

impl UdpTransport {
    pub fn bind(addr: SocketAddr) -> Result<UdpTransport, TransportError> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_nonblocking(true)?;
        Ok(UdpTransport { socket, peers: HashMap::new(), recv_buf: vec![0; MAX_DATAGRAM] })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.socket.local_addr()?)
    }

    /// Register where a node id lives.
    pub fn add_peer(&mut self, node: u32, addr: SocketAddr) {
        self.peers.insert(node, addr);
    }

    pub fn send(&mut self, dest: u32, bytes: &[u8]) -> Result<(), TransportError> {
        if bytes.len() > MAX_DATAGRAM {
            return Err(TransportError::OversizeDatagram(bytes.len()));
        }
        let addr = *self.peers.get(&dest).ok_or(TransportError::UnknownDestination(dest))?;
        self.socket.send_to(bytes, addr)?;
        Ok(())
    }

    /// Drain everything currently readable.
    pub fn poll(&mut self) -> Result<Vec<Vec<u8>>, TransportError> {
        let mut out = Vec::new();
        loop {
            match self.socket.recv_from(&mut self.recv_buf) {
                Ok((n, _src)) => out.push(self.recv_buf[..n].to_vec()),
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => break,
                // Some platforms surface async ICMP errors on the next recv;
                // the engine must stay unaffected.
                Err(e) if e.kind() == std::io::ErrorKind::ConnectionRefused => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(latency: u64, jitter: u64, drop: f64) -> LinkParams {
        LinkParams { latency_ms: latency, jitter_ms: jitter, drop_prob: drop, reorder: false, bandwidth_bps: 0 }
    }

    #[test]
    fn fixed_latency_delivery() {
        let mut ch = SimChannel::new(params(2, 0, 0.0), 1);
        let status = ch.send(9, b"x", 10).unwrap();
        assert_eq!(status, SendStatus::Scheduled(12));
        assert!(ch.poll(11).is_empty());
        let got = ch.poll(12);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].bytes, b"x");
    }

    #[test]
    fn drop_prob_one_drops_everything() {
        let mut ch = SimChannel::new(params(2, 0, 1.0), 1);
        for _ in 0..100 {
            assert_eq!(ch.send(9, b"x", 0).unwrap(), SendStatus::Dropped);
        }
        assert_eq!(ch.stats().dropped, 100);
        assert!(ch.poll(1000).is_empty());
    }

    #[test]
    fn drop_counts_within_binomial_bounds() {
        // 3 sigma of Binomial(10_000, 0.1): 1000 +- 90.
        let mut ch = SimChannel::new(params(2, 1, 0.1), 42);
        for i in 0..10_000u64 {
            ch.send(9, b"x", i).unwrap();
        }
        let dropped = ch.stats().dropped;
        assert!((910..=1090).contains(&dropped), "dropped = {dropped}");
    }

    #[test]
    fn poll_empty_channel() {
        let mut ch = SimChannel::new(params(1, 0, 0.0), 1);
        assert!(ch.poll(100).is_empty());
    }

    #[test]
    fn fifo_preserved_without_reorder() {
        // Jitter larger than the send spacing, reorder disabled: order holds.
        let mut ch = SimChannel::new(params(5, 4, 0.0), 7);
        for i in 0..200u64 {
            ch.send(9, &i.to_le_bytes(), i).unwrap();
        }
        let got = ch.poll(10_000);
        assert_eq!(got.len(), 200);
        for (i, d) in got.iter().enumerate() {
            assert_eq!(d.bytes, (i as u64).to_le_bytes());
        }
    }

    #[test]
    fn ties_keep_send_order() {
        let mut ch = SimChannel::new(params(3, 0, 0.0), 1);
        ch.send(9, b"first", 0).unwrap();
        ch.send(9, b"second", 0).unwrap();
        let got = ch.poll(3);
        assert_eq!(got[0].bytes, b"first");
        assert_eq!(got[1].bytes, b"second");
    }

    #[test]
    fn reorder_produces_inversions() {
        // Jitter beyond the inter-send spacing with reordering enabled must
        // invert at least one pair over a seeded batch.
        let mut ch = SimChannel::new(
            LinkParams { latency_ms: 5, jitter_ms: 4, drop_prob: 0.0, reorder: true, bandwidth_bps: 0 },
            11,
        );
        for i in 0..1000u64 {
            ch.send(9, &i.to_le_bytes(), i).unwrap();
        }
        let got = ch.poll(100_000);
        assert_eq!(got.len(), 1000);
        let inversions = got
            .windows(2)
            .filter(|w| {
                u64::from_le_bytes(w[0].bytes.clone().try_into().unwrap())
                    > u64::from_le_bytes(w[1].bytes.clone().try_into().unwrap())
            })
            .count();
        assert!(inversions > 0, "expected at least one inversion");
    }

    #[test]
    fn bandwidth_cap_serializes_sends() {
        // 8000 bit/s: a 100-byte (800 bit) datagram takes 100 ms to serialize.
        let mut ch = SimChannel::new(
            LinkParams { latency_ms: 0, jitter_ms: 0, drop_prob: 0.0, reorder: false, bandwidth_bps: 8000 },
            1,
        );
        let payload = [0u8; 100];
        assert_eq!(ch.send(9, &payload, 0).unwrap(), SendStatus::Scheduled(100));
        assert_eq!(ch.send(9, &payload, 0).unwrap(), SendStatus::Scheduled(200));
    }

    #[test]
    fn oversize_datagram_rejected() {
        let mut ch = SimChannel::new(params(1, 0, 0.0), 1);
        let big = vec![0u8; MAX_DATAGRAM + 1];
        assert!(matches!(ch.send(9, &big, 0), Err(TransportError::OversizeDatagram(_))));
    }

    #[test]
    fn conservation_at_every_tick() {
        let mut ch = SimChannel::new(params(3, 2, 0.2), 5);
        let mut sent = 0u64;
        let mut delivered = 0u64;
        for now in 0..500u64 {
            if now % 2 == 0 {
                ch.send(9, b"x", now).unwrap();
                sent += 1;
            }
            delivered += ch.poll(now).len() as u64;
            let s = ch.stats();
            assert_eq!(s.sent, sent);
            assert_eq!(s.delivered, delivered);
            assert_eq!(s.sent, s.delivered + s.dropped + ch.in_flight_len() as u64);
        }
    }

    #[test]
    fn determinism_same_seed_same_schedule() {
        let run = || {
            let mut ch = SimChannel::new(params(4, 3, 0.15), 99);
            let mut log = Vec::new();
            for now in 0..300u64 {
                log.push(format!("{:?}", ch.send(9, &now.to_le_bytes(), now).unwrap()));
                for d in ch.poll(now) {
                    log.push(format!("d{:?}", d.bytes));
                }
            }
            log
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn udp_loopback_roundtrip() {
        let mut a = UdpTransport::bind("127.0.0.1:0".parse().unwrap()).unwrap();
        let mut b = UdpTransport::bind("127.0.0.1:0".parse().unwrap()).unwrap();
        a.add_peer(2, b.local_addr().unwrap());
        a.send(2, b"hello wheel").unwrap();
        // Give the loopback a moment.
        let mut got = Vec::new();
        for _ in 0..50 {
            got = b.poll().unwrap();
            if !got.is_empty() {
                break;
            }
            std::thread::sleep(std::time::Duration::from_millis(2));
        }
        assert_eq!(got, vec![b"hello wheel".to_vec()]);
    }

    #[test]
    fn udp_unknown_destination_is_an_error() {
        let mut a = UdpTransport::bind("127.0.0.1:0".parse().unwrap()).unwrap();
        assert!(matches!(a.send(99, b"x"), Err(TransportError::UnknownDestination(99))));
    }
}
