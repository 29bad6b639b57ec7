//! Reliable publish-subscribe engine with sequence-numbered writers, bounded
//! history, per-reader proxies and HEARTBEAT/ACKNACK repair.
//!
//! The engine is a set of state machines driven by two inputs, timer events
//! and inbound packets, serialized per participant. Readers never volunteer
//! ACKNACKs; they answer heartbeats that reveal gaps, which keeps repair
//! traffic proportional to loss. Writers keep a ring of the most recent
//! `history_depth` messages; a sequence evicted before repair is reported to
//! the reader as an unrecoverable gap through the heartbeat range, counted on
//! both sides.
//!
//! Discovery is a single periodic ANNOUNCE carrying the node id and the
//! topics the participant subscribes to. A writer that hears an ANNOUNCE
//! naming its topic attaches a proxy for that reader; a peer silent for three
//! announce periods is expired and its proxies dropped. Late joiners get no
//! historical replay: the proxy's ack floor starts at the current sequence.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{Packet, PacketBody, WireError, MAX_DATAGRAM};
use crate::Tick;

/// Default writer history depth, in messages.
pub const DEFAULT_HISTORY_DEPTH: usize = 64;
/// Default heartbeat period, ms.
pub const DEFAULT_HEARTBEAT_MS: u64 = 50;
/// Default discovery announce period, ms. Liveliness expires after three
/// silent periods.
pub const DEFAULT_ANNOUNCE_MS: u64 = 100;
/// Largest publishable payload.
pub const MAX_PAYLOAD: usize = 64 * 1024;

#[derive(Debug, Error, PartialEq)]
pub enum PubSubError {
    #[error("payload of {0} bytes exceeds the maximum")]
    Oversize(usize),
    #[error("unknown reader {0}")]
    UnknownReader(u32),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reliability {
    BestEffort,
    Reliable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosPolicy {
    pub reliability: Reliability,
    #[serde(default = "default_history_depth")]
    pub history_depth: usize,
    #[serde(default = "default_heartbeat_ms", rename = "heartbeat_ms")]
    pub heartbeat_period_ms: u64,
}

fn default_history_depth() -> usize {
    DEFAULT_HISTORY_DEPTH
}

fn default_heartbeat_ms() -> u64 {
    DEFAULT_HEARTBEAT_MS
}

impl Default for QosPolicy {
    fn default() -> Self {
        QosPolicy {
            reliability: Reliability::Reliable,
            history_depth: DEFAULT_HISTORY_DEPTH,
            heartbeat_period_ms: DEFAULT_HEARTBEAT_MS,
        }
    }
}

impl QosPolicy {
    pub fn best_effort() -> QosPolicy {
        QosPolicy { reliability: Reliability::BestEffort, ..QosPolicy::default() }
    }

    fn validate(mut self) -> QosPolicy {
        self.history_depth = self.history_depth.max(1);
        self.heartbeat_period_ms = self.heartbeat_period_ms.max(1);
        self
    }
}

/// Where an outbound packet should go.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dest {
    Node(u32),
    /// Every reachable participant (discovery traffic).
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub dest: Dest,
    pub packet: Packet,
}

/// Per-reader state a reliable writer keeps.
#[derive(Debug, Clone)]
pub struct ReaderProxy {
    pub reader_id: u32,
    /// Highest sequence the reader has fully acknowledged.
    pub highest_acked: u64,
    /// First sequence this reader is entitled to (no replay of earlier
    /// history for late joiners).
    pub attach_floor: u64,
    /// Sequences the reader most recently reported missing.
    pub pending_repair: BTreeSet<u64>,
}

pub struct Writer {
    node: u32,
    topic: String,
    qos: QosPolicy,
    next_seq: u64,
    history: std::collections::VecDeque<(u64, Vec<u8>)>,
    proxies: Vec<ReaderProxy>,
    next_heartbeat: Tick,
    /// Sequences requested but already evicted, i.e. lost for good.
    pub unrecoverable_reported: u64,
}

impl Writer {
    pub fn new(node: u32, topic: impl Into<String>, qos: QosPolicy) -> Writer {
        Writer {
            node,
            topic: topic.into(),
            qos: qos.validate(),
            next_seq: 1,
            history: std::collections::VecDeque::new(),
            proxies: Vec::new(),
            next_heartbeat: 0,
            unrecoverable_reported: 0,
        }
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn proxies(&self) -> &[ReaderProxy] {
        &self.proxies
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn history_seqs(&self) -> Vec<u64> {
        self.history.iter().map(|(s, _)| *s).collect()
    }

    /// Attach a reader discovered on this topic. Idempotent. Late joiners
    /// start at the current sequence: no replay.
    pub fn attach_reader(&mut self, reader_id: u32) {
        if self.proxies.iter().any(|p| p.reader_id == reader_id) {
            return;
        }
        self.proxies.push(ReaderProxy {
            reader_id,
            highest_acked: self.next_seq - 1,
            attach_floor: self.next_seq,
            pending_repair: BTreeSet::new(),
        });
    }

    pub fn detach_reader(&mut self, reader_id: u32) {
        self.proxies.retain(|p| p.reader_id != reader_id);
    }

    /// Store the payload under the next sequence and fan a DATA packet out to
    /// every attached reader.
    pub fn publish(&mut self, payload: &[u8]) -> Result<(u64, Vec<Outbound>), PubSubError> {
        let overhead = 22 + self.topic.len(); // header + seq + payload length
        if payload.len() > MAX_PAYLOAD || payload.len() + overhead > MAX_DATAGRAM {
            return Err(PubSubError::Oversize(payload.len()));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.history.push_back((seq, payload.to_vec()));
        while self.history.len() > self.qos.history_depth {
            self.history.pop_front();
        }
        let out = self
            .proxies
            .iter()
            .map(|p| Outbound { dest: Dest::Node(p.reader_id), packet: self.data_packet(seq, payload) })
            .collect();
        Ok((seq, out))
    }

    fn data_packet(&self, seq: u64, payload: &[u8]) -> Packet {
        Packet {
            sender: self.node,
            topic: self.topic.clone(),
            body: PacketBody::Data { seq, payload: payload.to_vec() },
        }
    }

    fn history_first(&self) -> u64 {
        self.history.front().map_or(self.next_seq, |(s, _)| *s)
    }

    /// Heartbeat range advertised to one reader: the shared history bounds,
    /// floored by the reader's attach point. An empty history is advertised
    /// as `(next_seq, next_seq - 1)`.
    fn heartbeat_for(&self, proxy: &ReaderProxy) -> Packet {
        let first = self.history_first().max(proxy.attach_floor);
        Packet {
            sender: self.node,
            topic: self.topic.clone(),
            body: PacketBody::Heartbeat { first, last: self.next_seq - 1 },
        }
    }

    /// Handle an ACKNACK from a reader: advance its ack floor, retransmit
    /// whatever is still held, and answer evicted requests with an immediate
    /// heartbeat so the reader can declare them unrecoverable.
    pub fn on_acknack(
        &mut self,
        reader_id: u32,
        ack_floor: u64,
        missing: &[u64],
    ) -> Result<Vec<Outbound>, PubSubError> {
        let idx = self
            .proxies
            .iter()
            .position(|p| p.reader_id == reader_id)
            .ok_or(PubSubError::UnknownReader(reader_id))?;
        let hist_first = self.history_first();
        let next_seq = self.next_seq;
        {
            let proxy = &mut self.proxies[idx];
            proxy.highest_acked = proxy.highest_acked.max(ack_floor.saturating_sub(1));
            proxy.pending_repair = missing.iter().copied().collect();
        }
        let mut out = Vec::new();
        let mut evicted = false;
        for &seq in missing {
            if seq >= next_seq {
                continue; // never published; ignore
            }
            if let Some((_, payload)) = self.history.iter().find(|(s, _)| *s == seq) {
                let pkt = self.data_packet(seq, payload);
                out.push(Outbound { dest: Dest::Node(reader_id), packet: pkt });
            } else {
                debug_assert!(seq < hist_first);
                evicted = true;
                self.unrecoverable_reported += 1;
            }
        }
        if evicted {
            let pkt = self.heartbeat_for(&self.proxies[idx]);
            out.push(Outbound { dest: Dest::Node(reader_id), packet: pkt });
        }
        Ok(out)
    }

    /// Periodic heartbeats (reliable QoS only). Idempotent within a period.
    pub fn on_timer(&mut self, now: Tick) -> Vec<Outbound> {
        if self.qos.reliability != Reliability::Reliable || now < self.next_heartbeat {
            return Vec::new();
        }
        self.next_heartbeat = now + self.qos.heartbeat_period_ms;
        self.proxies
            .iter()
            .map(|p| Outbound { dest: Dest::Node(p.reader_id), packet: self.heartbeat_for(p) })
            .collect()
    }

    /// Bounded-memory contract: bytes held in history.
    pub fn history_bytes(&self) -> usize {
        self.history.iter().map(|(_, p)| p.len()).sum()
    }
}

/// What a reader produced for one inbound packet.
#[derive(Debug, Default)]
pub struct ReaderOutput {
    /// Payloads now deliverable to the application, in sequence order.
    pub delivered: Vec<Vec<u8>>,
    /// Repair request triggered by a heartbeat that revealed gaps.
    pub acknack: Option<Outbound>,
}

pub struct Reader {
    node: u32,
    topic: String,
    qos: QosPolicy,
    expected_seq: u64,
    reorder: BTreeMap<u64, Vec<u8>>,
    pub delivered_count: u64,
    pub duplicate_count: u64,
    /// Best-effort: sequences skipped over. Reliable: sequences declared
    /// unrecoverable by the writer's advertised range.
    pub lost_count: u64,
    /// Sequences of delivered messages, tracked lazily by callers if needed.
    last_delivered: Option<u64>,
}

impl Reader {
    pub fn new(node: u32, topic: impl Into<String>, qos: QosPolicy) -> Reader {
        Reader {
            node,
            topic: topic.into(),
            qos: qos.validate(),
            expected_seq: 1,
            reorder: BTreeMap::new(),
            delivered_count: 0,
            duplicate_count: 0,
            lost_count: 0,
            last_delivered: None,
        }
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn expected_seq(&self) -> u64 {
        self.expected_seq
    }

    pub fn buffered(&self) -> usize {
        self.reorder.len()
    }

    pub fn last_delivered(&self) -> Option<u64> {
        self.last_delivered
    }

    pub fn on_packet(&mut self, pkt: &Packet) -> ReaderOutput {
        let mut out = ReaderOutput::default();
        match &pkt.body {
            PacketBody::Data { seq, payload } => self.on_data(*seq, payload, &mut out),
            PacketBody::Heartbeat { first, last } => {
                self.on_heartbeat(pkt.sender, *first, *last, &mut out)
            }
            _ => {}
        }
        out
    }

    fn deliver(&mut self, seq: u64, payload: Vec<u8>, out: &mut ReaderOutput) {
        debug_assert!(self.last_delivered.map_or(true, |d| seq > d));
        self.delivered_count += 1;
        self.last_delivered = Some(seq);
        out.delivered.push(payload);
    }

    fn on_data(&mut self, seq: u64, payload: &[u8], out: &mut ReaderOutput) {
        if seq < self.expected_seq {
            self.duplicate_count += 1;
            return;
        }
        match self.qos.reliability {
            Reliability::BestEffort => {
                // Advance past any gap immediately.
                self.lost_count += seq - self.expected_seq;
                self.expected_seq = seq + 1;
                self.deliver(seq, payload.to_vec(), out);
            }
            Reliability::Reliable => {
                if seq == self.expected_seq {
                    self.expected_seq += 1;
                    self.deliver(seq, payload.to_vec(), out);
                    self.drain_in_order(out);
                } else if self.reorder.insert(seq, payload.to_vec()).is_some() {
                    self.duplicate_count += 1;
                }
            }
        }
    }

    fn drain_in_order(&mut self, out: &mut ReaderOutput) {
        while let Some(payload) = self.reorder.remove(&self.expected_seq) {
            let seq = self.expected_seq;
            self.expected_seq += 1;
            self.deliver(seq, payload, out);
        }
    }

    fn on_heartbeat(&mut self, writer: u32, first: u64, last: u64, out: &mut ReaderOutput) {
        if self.qos.reliability != Reliability::Reliable {
            return;
        }
        // Everything below the advertised floor is gone for good: skip it,
        // delivering whatever arrived out of order in the meantime.
        while self.expected_seq < first {
            if let Some(payload) = self.reorder.remove(&self.expected_seq) {
                let seq = self.expected_seq;
                self.deliver(seq, payload, out);
            } else {
                self.lost_count += 1;
            }
            self.expected_seq += 1;
        }
        self.drain_in_order(out);
        let missing: Vec<u64> = (self.expected_seq..=last)
            .filter(|seq| !self.reorder.contains_key(seq))
            .collect();
        if !missing.is_empty() {
            out.acknack = Some(Outbound {
                dest: Dest::Node(writer),
                packet: Packet {
                    sender: self.node,
                    topic: self.topic.clone(),
                    body: PacketBody::AckNack { ack_floor: self.expected_seq, missing },
                },
            });
        }
    }
}

// ---------------------------------------------------------------------------
// Participant: discovery + routing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Peer {
    pub node: u32,
    pub topics: Vec<String>,
    pub last_seen: Tick,
}

/// One network participant: its writers, readers and peer table.
pub struct Participant {
    id: u32,
    announce_period_ms: u64,
    next_announce: Tick,
    writers: Vec<Writer>,
    readers: Vec<Reader>,
    peers: HashMap<u32, Peer>,
    /// Packets that failed to decode or referenced unknown endpoints.
    pub protocol_errors: u64,
}

/// Payload delivered to the application, tagged with its topic.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub topic: String,
    pub payload: Vec<u8>,
}

impl Participant {
    pub fn new(id: u32) -> Participant {
        Participant {
            id,
            announce_period_ms: DEFAULT_ANNOUNCE_MS,
            next_announce: 0,
            writers: Vec::new(),
            readers: Vec::new(),
            peers: HashMap::new(),
            protocol_errors: 0,
        }
    }

    pub fn with_announce_period(mut self, period_ms: u64) -> Participant {
        self.announce_period_ms = period_ms.max(1);
        self
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn add_writer(&mut self, topic: impl Into<String>, qos: QosPolicy) -> usize {
        self.writers.push(Writer::new(self.id, topic, qos));
        self.writers.len() - 1
    }

    pub fn add_reader(&mut self, topic: impl Into<String>, qos: QosPolicy) -> usize {
        self.readers.push(Reader::new(self.id, topic, qos));
        self.readers.len() - 1
    }

    pub fn writer(&mut self, idx: usize) -> &mut Writer {
        &mut self.writers[idx]
    }

    pub fn reader(&mut self, idx: usize) -> &mut Reader {
        &mut self.readers[idx]
    }

    pub fn reader_ref(&self, idx: usize) -> &Reader {
        &self.readers[idx]
    }

    pub fn writer_ref(&self, idx: usize) -> &Writer {
        &self.writers[idx]
    }

    pub fn peers(&self) -> &HashMap<u32, Peer> {
        &self.peers
    }

    /// Build this participant's ANNOUNCE: node id plus subscribed topics.
    pub fn announce(&self) -> Packet {
        Packet {
            sender: self.id,
            topic: String::new(),
            body: PacketBody::Announce {
                node: self.id,
                topics: self.readers.iter().map(|r| r.topic.clone()).collect(),
            },
        }
    }

    /// Periodic work: discovery announces, peer expiry, writer heartbeats.
    pub fn on_timer(&mut self, now: Tick) -> Vec<Outbound> {
        let mut out = Vec::new();
        if now >= self.next_announce {
            self.next_announce = now + self.announce_period_ms;
            out.push(Outbound { dest: Dest::All, packet: self.announce() });
        }
        self.expire_peers(now);
        for w in &mut self.writers {
            out.extend(w.on_timer(now));
        }
        out
    }

    fn expire_peers(&mut self, now: Tick) {
        let deadline = 3 * self.announce_period_ms;
        let expired: Vec<u32> = self
            .peers
            .values()
            .filter(|p| now.saturating_sub(p.last_seen) > deadline)
            .map(|p| p.node)
            .collect();
        for node in expired {
            self.peers.remove(&node);
            for w in &mut self.writers {
                w.detach_reader(node);
            }
        }
    }

    /// Decode and route one inbound datagram.
    pub fn on_datagram(&mut self, bytes: &[u8], now: Tick) -> (Vec<Delivery>, Vec<Outbound>) {
        match Packet::decode(bytes) {
            Ok(pkt) => self.on_packet(&pkt, now),
            Err(_) => {
                self.protocol_errors += 1;
                (Vec::new(), Vec::new())
            }
        }
    }

    pub fn on_packet(&mut self, pkt: &Packet, now: Tick) -> (Vec<Delivery>, Vec<Outbound>) {
        let mut deliveries = Vec::new();
        let mut out = Vec::new();
        match &pkt.body {
            PacketBody::Announce { node, topics } => {
                self.peers.insert(
                    *node,
                    Peer { node: *node, topics: topics.clone(), last_seen: now },
                );
                for w in &mut self.writers {
                    if topics.iter().any(|t| t == &w.topic) {
                        w.attach_reader(*node);
                    }
                }
            }
            PacketBody::Data { .. } | PacketBody::Heartbeat { .. } => {
                for r in &mut self.readers {
                    if r.topic == pkt.topic {
                        let res = r.on_packet(pkt);
                        deliveries.extend(res.delivered.into_iter().map(|payload| Delivery {
                            topic: pkt.topic.clone(),
                            payload,
                        }));
                        out.extend(res.acknack);
                    }
                }
            }
            PacketBody::AckNack { ack_floor, missing } => {
                for w in &mut self.writers {
                    if w.topic == pkt.topic {
                        match w.on_acknack(pkt.sender, *ack_floor, missing) {
                            Ok(repair) => out.extend(repair),
                            Err(_) => self.protocol_errors += 1,
                        }
                    }
                }
            }
        }
        (deliveries, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reliable() -> QosPolicy {
        QosPolicy::default()
    }

    #[test]
    fn publish_assigns_consecutive_seqs() {
        let mut w = Writer::new(1, "t", reliable());
        for expect in 1..=3u64 {
            let (seq, _) = w.publish(b"x").unwrap();
            assert_eq!(seq, expect);
        }
    }

    #[test]
    fn history_ring_evicts_oldest() {
        let qos = QosPolicy { history_depth: 2, ..reliable() };
        let mut w = Writer::new(1, "t", qos);
        for _ in 0..3 {
            w.publish(b"x").unwrap();
        }
        assert_eq!(w.history_seqs(), vec![2, 3]);
    }

    #[test]
    fn late_joiner_gets_no_replay() {
        let mut w = Writer::new(1, "t", reliable());
        w.publish(b"a").unwrap();
        w.publish(b"b").unwrap();
        w.attach_reader(9);
        let p = &w.proxies()[0];
        assert_eq!(p.highest_acked, 2, "acked floor starts at the current seq");
        assert_eq!(p.attach_floor, 3);
        // Its heartbeat must not advertise pre-attach history.
        let hb = w.heartbeat_for(&w.proxies()[0]);
        assert_eq!(hb.body, PacketBody::Heartbeat { first: 3, last: 2 });
    }

    #[test]
    fn acknack_retransmits_missing_in_history() {
        let mut w = Writer::new(1, "t", reliable());
        w.attach_reader(9);
        for _ in 0..5 {
            w.publish(b"x").unwrap();
        }
        let out = w.on_acknack(9, 2, &[2, 4]).unwrap();
        let seqs: Vec<u64> = out
            .iter()
            .filter_map(|o| match &o.packet.body {
                PacketBody::Data { seq, .. } => Some(*seq),
                _ => None,
            })
            .collect();
        assert_eq!(seqs, vec![2, 4]);
        assert_eq!(w.proxies()[0].highest_acked, 1);
    }

    #[test]
    fn evicted_seq_answered_with_heartbeat_gap() {
        let qos = QosPolicy { history_depth: 2, ..reliable() };
        let mut w = Writer::new(1, "t", qos);
        w.attach_reader(9);
        for _ in 0..5 {
            w.publish(b"x").unwrap();
        }
        // Seq 1 is long gone; the writer answers with its available range.
        let out = w.on_acknack(9, 1, &[1]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].packet.body, PacketBody::Heartbeat { first: 4, last: 5 });
        assert_eq!(w.unrecoverable_reported, 1);
    }

    #[test]
    fn acknack_from_unknown_reader_errors() {
        let mut w = Writer::new(1, "t", reliable());
        assert_eq!(w.on_acknack(42, 1, &[]), Err(PubSubError::UnknownReader(42)));
    }

    #[test]
    fn heartbeat_ranges() {
        let mut w = Writer::new(1, "t", reliable());
        w.attach_reader(9);
        let hb = w.on_timer(0);
        assert_eq!(hb.len(), 1);
        assert_eq!(hb[0].packet.body, PacketBody::Heartbeat { first: 1, last: 0 });
        // Not due again within the period.
        assert!(w.on_timer(1).is_empty());
        for _ in 0..7 {
            w.publish(b"x").unwrap();
        }
        let hb = w.on_timer(DEFAULT_HEARTBEAT_MS);
        assert_eq!(hb[0].packet.body, PacketBody::Heartbeat { first: 1, last: 7 });
    }

    #[test]
    fn best_effort_writer_sends_no_heartbeats() {
        let mut w = Writer::new(1, "t", QosPolicy::best_effort());
        w.attach_reader(9);
        w.publish(b"x").unwrap();
        assert!(w.on_timer(1000).is_empty());
    }

    #[test]
    fn oversize_payload_rejected() {
        let mut w = Writer::new(1, "t", reliable());
        let big = vec![0u8; MAX_PAYLOAD + 1];
        assert_eq!(w.publish(&big), Err(PubSubError::Oversize(MAX_PAYLOAD + 1)));
    }

    fn data(seq: u64) -> Packet {
        Packet {
            sender: 1,
            topic: "t".into(),
            body: PacketBody::Data { seq, payload: vec![seq as u8] },
        }
    }

    fn heartbeat(first: u64, last: u64) -> Packet {
        Packet { sender: 1, topic: "t".into(), body: PacketBody::Heartbeat { first, last } }
    }

    #[test]
    fn reliable_reader_reorders() {
        let mut r = Reader::new(9, "t", reliable());
        assert_eq!(r.on_packet(&data(1)).delivered.len(), 1);
        assert!(r.on_packet(&data(3)).delivered.is_empty());
        let out = r.on_packet(&data(2));
        assert_eq!(out.delivered.len(), 2, "2 then buffered 3");
        assert_eq!(r.delivered_count, 3);
    }

    #[test]
    fn best_effort_reader_skips_gaps() {
        let mut r = Reader::new(9, "t", QosPolicy::best_effort());
        assert_eq!(r.on_packet(&data(1)).delivered.len(), 1);
        assert_eq!(r.on_packet(&data(3)).delivered.len(), 1);
        assert_eq!(r.lost_count, 1);
        assert_eq!(r.expected_seq(), 4);
    }

    #[test]
    fn duplicates_are_discarded() {
        for qos in [reliable(), QosPolicy::best_effort()] {
            let mut r = Reader::new(9, "t", qos);
            r.on_packet(&data(1));
            r.on_packet(&data(2));
            let out = r.on_packet(&data(2));
            assert!(out.delivered.is_empty());
            assert_eq!(r.duplicate_count, 1);
            assert_eq!(r.delivered_count, 2);
        }
    }

    #[test]
    fn heartbeat_with_gaps_triggers_acknack() {
        // Set-arithmetic oracle: missing = {expected..=last} minus buffered.
        let mut r = Reader::new(9, "t", reliable());
        for seq in 1..=4u64 {
            r.on_packet(&data(seq));
        }
        r.on_packet(&data(6)); // buffered; 5 missing
        let out = r.on_packet(&heartbeat(3, 7));
        let Some(acknack) = out.acknack else { panic!("expected acknack") };
        let expected: Vec<u64> = (5..=7).filter(|s| *s != 6).collect();
        assert_eq!(
            acknack.packet.body,
            PacketBody::AckNack { ack_floor: 5, missing: expected }
        );
        assert_eq!(acknack.dest, Dest::Node(1));
    }

    #[test]
    fn heartbeat_floor_declares_losses() {
        let mut r = Reader::new(9, "t", reliable());
        r.on_packet(&data(1));
        r.on_packet(&data(4)); // buffered
        // Writer evicted 2 and 3.
        let out = r.on_packet(&heartbeat(4, 4));
        assert_eq!(out.delivered.len(), 1, "buffered 4 becomes deliverable");
        assert_eq!(r.lost_count, 2);
        assert!(out.acknack.is_none());
    }

    #[test]
    fn no_acknack_without_gaps() {
        let mut r = Reader::new(9, "t", reliable());
        for seq in 1..=3u64 {
            r.on_packet(&data(seq));
        }
        assert!(r.on_packet(&heartbeat(1, 3)).acknack.is_none());
    }

    #[test]
    fn announce_adds_peer_and_proxy() {
        let mut p = Participant::new(1);
        p.add_writer("wheel", reliable());
        let announce = Packet {
            sender: 9,
            topic: String::new(),
            body: PacketBody::Announce { node: 9, topics: vec!["wheel".into()] },
        };
        p.on_packet(&announce, 5);
        assert!(p.peers().contains_key(&9));
        assert_eq!(p.writer_ref(0).proxies().len(), 1);
    }

    #[test]
    fn silent_peer_expires_and_proxies_drop() {
        let mut p = Participant::new(1).with_announce_period(100);
        p.add_writer("wheel", reliable());
        let announce = Packet {
            sender: 9,
            topic: String::new(),
            body: PacketBody::Announce { node: 9, topics: vec!["wheel".into()] },
        };
        p.on_packet(&announce, 0);
        p.on_timer(300);
        assert!(p.peers().contains_key(&9), "still within the deadline");
        p.on_timer(301);
        assert!(!p.peers().contains_key(&9));
        assert!(p.writer_ref(0).proxies().is_empty());
    }

    #[test]
    fn two_subscribers_double_the_fanout() {
        let mut p = Participant::new(1);
        let w = p.add_writer("wheel", reliable());
        for node in [8, 9] {
            let announce = Packet {
                sender: node,
                topic: String::new(),
                body: PacketBody::Announce { node, topics: vec!["wheel".into()] },
            };
            p.on_packet(&announce, 0);
        }
        let (_, out) = p.writer(w).publish(b"x").unwrap();
        assert_eq!(out.len(), 2);
        let dests: Vec<Dest> = out.iter().map(|o| o.dest).collect();
        assert!(dests.contains(&Dest::Node(8)) && dests.contains(&Dest::Node(9)));
    }

    #[test]
    fn announce_packet_lists_subscriptions() {
        let mut p = Participant::new(7);
        p.add_reader("wheel", reliable());
        let pkt = p.announce();
        assert_eq!(
            pkt.body,
            PacketBody::Announce { node: 7, topics: vec!["wheel".into()] }
        );
    }

    #[test]
    fn bad_datagram_counted_and_dropped() {
        let mut p = Participant::new(1);
        let (deliveries, out) = p.on_datagram(&[1, 2, 3], 0);
        assert!(deliveries.is_empty() && out.is_empty());
        assert_eq!(p.protocol_errors, 1);
    }

    #[test]
    fn history_memory_is_bounded() {
        let qos = QosPolicy { history_depth: 8, ..reliable() };
        let mut w = Writer::new(1, "t", qos);
        let payload = vec![0u8; 1000];
        for _ in 0..100 {
            w.publish(&payload).unwrap();
        }
        assert!(w.history_bytes() <= 8 * 1000);
    }
}
