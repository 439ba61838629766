//! Authenticated TCP endpoint.
//!
//! Every segment carries an HMAC tag under the session key that route
//! discovery agreed with the peer. A responder allocates connection
//! resources only once the third handshake segment verifies, so SYNs from
//! nodes without the key never occupy the half-open table. Close mirrors the
//! handshake (FIN, FIN_ACK, ACK) and discards the key.
//!
//! In baseline mode tags are neither sent nor checked, SYNs go straight into
//! a bounded half-open table, and an ACK for data never sent is answered
//! with a re-synchronising ACK, as classic TCP does.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::{hash, mac_tag, mac_verify, Digest, MacTag, SessionKey};
use crate::simnet::Tick;
use crate::wire::{Segment, SegmentRole};

pub const DEFAULT_HALF_OPEN_CAPACITY: usize = 64;
pub const DEFAULT_RETRANSMIT_TICKS: Tick = 16;
pub const DEFAULT_MAX_RETRIES: u32 = 2;
pub const MSS: usize = 512;
pub const LISTEN_PORT: u64 = 80;
const EPHEMERAL_BASE: u64 = 49_152;
const ISN_MODULUS: u64 = 1 << 32;

#[derive(Clone, Debug)]
pub struct TcpConfig {
    pub secure: bool,
    pub half_open_capacity: usize,
    pub retransmit_ticks: Tick,
    pub max_retries: u32,
    pub rng_seed: u64,
}

impl TcpConfig {
    pub fn new(secure: bool, rng_seed: u64) -> Self {
        TcpConfig {
            secure,
            half_open_capacity: DEFAULT_HALF_OPEN_CAPACITY,
            retransmit_ticks: DEFAULT_RETRANSMIT_TICKS,
            max_retries: DEFAULT_MAX_RETRIES,
            rng_seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SegmentDrop {
    TagMismatch,
    BadAckNumber,
    OutOfPhase,
    Replay,
    TableFull,
}

impl SegmentDrop {
    pub fn label(self) -> &'static str {
        match self {
            SegmentDrop::TagMismatch => "tag_mismatch",
            SegmentDrop::BadAckNumber => "bad_ack_number",
            SegmentDrop::OutOfPhase => "out_of_phase",
            SegmentDrop::Replay => "replay",
            SegmentDrop::TableFull => "table_full",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TcpError {
    #[error("no session key for peer; run route discovery first")]
    NoSessionKey,
    #[error("connection is not established")]
    NotEstablished,
    #[error("unknown connection")]
    UnknownConnection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Closed,
    SynSent,
    SynReceived,
    Established,
    FinWait,
    LastAck,
    ClosedFinal,
}

/// `(peer id, local port, peer port)`
pub type ConnId = (Digest, u64, u64);

#[derive(Clone, Debug)]
pub struct Connection {
    pub phase: Phase,
    pub initiator: bool,
    pub local_isn: u64,
    pub peer_isn: u64,
    /// Next sequence number we will send.
    pub next_seq: u64,
    /// Next sequence number we expect from the peer.
    pub next_ack: u64,
    key: Option<SessionKey>,
    pub resources_allocated: bool,
    pub half_open_since: Option<Tick>,
    to_send: usize,
    sent_total: usize,
    in_flight: Option<Segment>,
    retries: u32,
    generation: u64,
    pub delivered: usize,
}

impl Connection {
    fn new(initiator: bool, key: Option<SessionKey>) -> Self {
        Connection {
            phase: Phase::Closed,
            initiator,
            local_isn: 0,
            peer_isn: 0,
            next_seq: 0,
            next_ack: 0,
            key,
            resources_allocated: false,
            half_open_since: None,
            to_send: 0,
            sent_total: 0,
            in_flight: None,
            retries: 0,
            generation: 0,
            delivered: 0,
        }
    }

    pub fn has_key(&self) -> bool {
        self.key.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TcpTimer {
    Retransmit { conn: ConnId, generation: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TcpEvent {
    Established { conn: ConnId },
    Allocated { conn: ConnId },
    Delivered { conn: ConnId, bytes: usize },
    /// All queued data acknowledged; close has started.
    SendComplete { conn: ConnId },
    Closed { conn: ConnId },
    /// Handshake or transfer gave up after its retries.
    Failed { conn: ConnId },
    /// The session key for this peer must be forgotten.
    DiscardKey { peer: Digest },
}

#[derive(Debug, Default)]
pub struct TcpEffects {
    /// Segments for the given peer.
    pub sends: Vec<(Digest, Segment)>,
    pub timers: Vec<(Tick, TcpTimer)>,
    pub events: Vec<TcpEvent>,
}

/// One line of the per-endpoint audit log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Audit {
    pub tick: Tick,
    pub conn: ConnId,
    pub kind: AuditKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AuditKind {
    Sent(SegmentRole),
    /// Segment accepted; `tag_verified` is false only in baseline mode.
    Accepted { role: SegmentRole, tag_verified: bool },
    Dropped(SegmentRole, SegmentDrop),
    Allocated,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TcpCounters {
    pub drops: BTreeMap<&'static str, u64>,
    pub peak_half_open: usize,
    pub handshakes_completed: u64,
    pub segments_sent: u64,
}

/// `(r + H(src_port ‖ dst_port ‖ own_id ‖ peer_id ‖ key)) mod 2^32`.
pub fn make_isn(src_port: u64, dst_port: u64, own_id: &Digest, peer_id: &Digest, key: &[u8], r: u64) -> u64 {
    let mut input = Vec::with_capacity(16 + 64 + 4 + key.len());
    input.extend_from_slice(&src_port.to_be_bytes());
    input.extend_from_slice(&dst_port.to_be_bytes());
    input.extend_from_slice(own_id.as_bytes());
    input.extend_from_slice(peer_id.as_bytes());
    input.extend_from_slice(&(key.len() as u32).to_be_bytes());
    input.extend_from_slice(key);
    let d = hash(&input);
    let low = u64::from_be_bytes(d.0[24..].try_into().expect("8 bytes"));
    (r % ISN_MODULUS + low % ISN_MODULUS) % ISN_MODULUS
}

fn payload_bytes(offset: usize, len: usize) -> Vec<u8> {
    (offset..offset + len).map(|i| (i % 251) as u8).collect()
}

pub struct TcpEndpoint {
    me: Digest,
    config: TcpConfig,
    isn_counter: u64,
    rng: ChaCha20Rng,
    next_port: u64,
    conns: BTreeMap<ConnId, Connection>,
    counters: TcpCounters,
    audit: Vec<Audit>,
}

impl TcpEndpoint {
    pub fn new(me: Digest, config: TcpConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(config.rng_seed);
        let isn_counter = rng.gen_range(0..ISN_MODULUS);
        TcpEndpoint {
            me,
            config,
            isn_counter,
            rng,
            next_port: EPHEMERAL_BASE,
            conns: BTreeMap::new(),
            counters: TcpCounters::default(),
            audit: Vec::new(),
        }
    }

    pub fn counters(&self) -> &TcpCounters {
        &self.counters
    }

    pub fn audit(&self) -> &[Audit] {
        &self.audit
    }

    pub fn connection(&self, conn: &ConnId) -> Option<&Connection> {
        self.conns.get(conn)
    }

    pub fn connections(&self) -> &BTreeMap<ConnId, Connection> {
        &self.conns
    }

    pub fn half_open(&self) -> usize {
        self.conns
            .values()
            .filter(|c| c.phase == Phase::SynReceived)
            .count()
    }

    fn next_r(&mut self) -> u64 {
        self.isn_counter += self.rng.gen_range(1..=1u64 << 16);
        self.isn_counter
    }

    fn isn(&mut self, conn: &ConnId, key: Option<&SessionKey>) -> u64 {
        let r = self.next_r();
        let key = key.map(|k| k.key_bytes.as_slice()).unwrap_or(&[]);
        make_isn(conn.1, conn.2, &self.me, &conn.0, key, r)
    }

    fn tagged(&self, mut seg: Segment, key: Option<&SessionKey>) -> Segment {
        if let Some(k) = key {
            seg.tag = mac_tag(&seg.tag_input(), k);
        }
        seg
    }

    /// Builds, tags, records and (if `reliable`) arms retransmission for an
    /// outgoing segment on `conn`.
    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        conn_id: ConnId,
        role: SegmentRole,
        seq: u64,
        ack: u64,
        payload: Vec<u8>,
        reliable: bool,
        now: Tick,
        fx: &mut TcpEffects,
    ) {
        let conn = self.conns.get_mut(&conn_id).expect("caller holds connection");
        let mut seg = Segment::new(role, conn_id.1, conn_id.2, seq, ack);
        seg.payload = payload;
        let seg = {
            let key = conn.key.clone();
            self.tagged(seg, key.as_ref())
        };
        let conn = self.conns.get_mut(&conn_id).expect("still present");
        if reliable {
            conn.in_flight = Some(seg.clone());
            conn.retries = 0;
            conn.generation += 1;
            fx.timers.push((
                now + self.config.retransmit_ticks,
                TcpTimer::Retransmit {
                    conn: conn_id,
                    generation: conn.generation,
                },
            ));
        }
        self.counters.segments_sent += 1;
        self.audit.push(Audit {
            tick: now,
            conn: conn_id,
            kind: AuditKind::Sent(role),
        });
        fx.sends.push((conn_id.0, seg));
    }

    /// Opens a connection to `peer` and queues `bytes` of data to send once
    /// established. Returns the connection id.
    pub fn initiate(
        &mut self,
        peer: Digest,
        key: Option<&SessionKey>,
        bytes: usize,
        now: Tick,
    ) -> Result<(ConnId, TcpEffects), TcpError> {
        if self.config.secure && key.is_none() {
            return Err(TcpError::NoSessionKey);
        }
        let port = self.next_port;
        self.next_port += 1;
        let conn_id = (peer, port, LISTEN_PORT);
        let key = if self.config.secure { key.cloned() } else { None };
        let isn = self.isn(&conn_id, key.as_ref());
        let mut conn = Connection::new(true, key);
        conn.phase = Phase::SynSent;
        conn.local_isn = isn;
        conn.next_seq = isn + 1;
        conn.to_send = bytes;
        self.conns.insert(conn_id, conn);
        let mut fx = TcpEffects::default();
        self.emit(conn_id, SegmentRole::Syn, isn, 0, Vec::new(), true, now, &mut fx);
        Ok((conn_id, fx))
    }

    /// Starts the tagged close of an established connection.
    pub fn terminate(&mut self, conn_id: ConnId, now: Tick) -> Result<TcpEffects, TcpError> {
        let conn = self.conns.get_mut(&conn_id).ok_or(TcpError::UnknownConnection)?;
        if conn.phase != Phase::Established {
            return Err(TcpError::NotEstablished);
        }
        conn.phase = Phase::FinWait;
        let (seq, ack) = (conn.next_seq, conn.next_ack);
        let mut fx = TcpEffects::default();
        self.emit(conn_id, SegmentRole::Fin, seq, ack, Vec::new(), true, now, &mut fx);
        Ok(fx)
    }

    fn drop_seg(&mut self, conn: ConnId, role: SegmentRole, reason: SegmentDrop, now: Tick) -> SegmentDrop {
        *self.counters.drops.entry(reason.label()).or_default() += 1;
        self.audit.push(Audit {
            tick: now,
            conn,
            kind: AuditKind::Dropped(role, reason),
        });
        reason
    }

    /// Handles a segment from `peer`. `session_key` is the current key for
    /// `peer`, consulted only for SYNs that open a new connection.
    pub fn on_segment(
        &mut self,
        peer: Digest,
        seg: &Segment,
        session_key: Option<&SessionKey>,
        now: Tick,
    ) -> Result<TcpEffects, SegmentDrop> {
        let conn_id = (peer, seg.dst_port, seg.src_port);
        let existing = self.conns.get(&conn_id);
        let fresh_syn = seg.role == SegmentRole::Syn
            && existing.is_none_or(|c| c.phase == Phase::ClosedFinal);

        let verified = if self.config.secure {
            let key = if fresh_syn {
                session_key.cloned()
            } else {
                existing.and_then(|c| c.key.clone())
            };
            match key {
                Some(k) if mac_verify(&seg.tag_input(), &k, &seg.tag) => true,
                _ => return Err(self.drop_seg(conn_id, seg.role, SegmentDrop::TagMismatch, now)),
            }
        } else {
            false
        };

        let result = if fresh_syn {
            self.on_syn(conn_id, seg, session_key, now)
        } else if existing.is_none() {
            Err(SegmentDrop::OutOfPhase)
        } else {
            self.advance(conn_id, seg, now)
        };
        match result {
            Ok(fx) => {
                self.audit.push(Audit {
                    tick: now,
                    conn: conn_id,
                    kind: AuditKind::Accepted {
                        role: seg.role,
                        tag_verified: verified,
                    },
                });
                // allocation is logged after the segment that caused it
                if fx
                    .events
                    .iter()
                    .any(|e| matches!(e, TcpEvent::Allocated { .. }))
                {
                    self.audit.push(Audit {
                        tick: now,
                        conn: conn_id,
                        kind: AuditKind::Allocated,
                    });
                }
                Ok(fx)
            }
            Err(reason) => Err(self.drop_seg(conn_id, seg.role, reason, now)),
        }
    }

    fn on_syn(
        &mut self,
        conn_id: ConnId,
        seg: &Segment,
        session_key: Option<&SessionKey>,
        now: Tick,
    ) -> Result<TcpEffects, SegmentDrop> {
        if self.half_open() >= self.config.half_open_capacity {
            return Err(SegmentDrop::TableFull);
        }
        let key = if self.config.secure { session_key.cloned() } else { None };
        let isn = self.isn(&conn_id, key.as_ref());
        let mut conn = Connection::new(false, key);
        conn.phase = Phase::SynReceived;
        conn.half_open_since = Some(now);
        conn.local_isn = isn;
        conn.peer_isn = seg.seq;
        conn.next_seq = isn + 1;
        conn.next_ack = seg.seq + 1;
        self.conns.insert(conn_id, conn);
        self.counters.peak_half_open = self.counters.peak_half_open.max(self.half_open());
        let mut fx = TcpEffects::default();
        self.emit(conn_id, SegmentRole::SynAck, isn, seg.seq + 1, Vec::new(), true, now, &mut fx);
        Ok(fx)
    }

    fn advance(&mut self, conn_id: ConnId, seg: &Segment, now: Tick) -> Result<TcpEffects, SegmentDrop> {
        let conn = self.conns.get(&conn_id).expect("caller checked").clone();
        let mut fx = TcpEffects::default();
        match (conn.phase, seg.role) {
            (Phase::SynSent, SegmentRole::SynAck) => {
                if seg.ack != conn.local_isn + 1 {
                    return Err(SegmentDrop::BadAckNumber);
                }
                let c = self.conns.get_mut(&conn_id).expect("present");
                c.peer_isn = seg.seq;
                c.next_ack = seg.seq + 1;
                c.phase = Phase::Established;
                c.in_flight = None;
                let (seq, ack) = (c.next_seq, c.next_ack);
                self.emit(conn_id, SegmentRole::Ack, seq, ack, Vec::new(), false, now, &mut fx);
                self.counters.handshakes_completed += 1;
                fx.events.push(TcpEvent::Established { conn: conn_id });
                self.send_next(conn_id, now, &mut fx);
            }
            (Phase::Established | Phase::FinWait, SegmentRole::SynAck) if conn.initiator => {
                // our third segment was lost; the peer is retrying
                if seg.seq != conn.peer_isn || seg.ack != conn.local_isn + 1 {
                    return Err(SegmentDrop::Replay);
                }
                self.emit(conn_id, SegmentRole::Ack, conn.local_isn + 1, conn.peer_isn + 1, Vec::new(), false, now, &mut fx);
            }
            (Phase::SynReceived, SegmentRole::Ack) => {
                if seg.ack != conn.local_isn + 1 || seg.seq != conn.peer_isn + 1 {
                    return Err(SegmentDrop::BadAckNumber);
                }
                let c = self.conns.get_mut(&conn_id).expect("present");
                c.phase = Phase::Established;
                c.half_open_since = None;
                c.in_flight = None;
                c.generation += 1;
                c.resources_allocated = true;
                self.counters.handshakes_completed += 1;
                fx.events.push(TcpEvent::Established { conn: conn_id });
                fx.events.push(TcpEvent::Allocated { conn: conn_id });
            }
            (Phase::Established, SegmentRole::Data) => {
                let len = seg.payload.len() as u64;
                if seg.seq == conn.next_ack {
                    let c = self.conns.get_mut(&conn_id).expect("present");
                    c.next_ack += len;
                    c.delivered += seg.payload.len();
                    let (s, a) = (c.next_seq, c.next_ack);
                    fx.events.push(TcpEvent::Delivered {
                        conn: conn_id,
                        bytes: seg.payload.len(),
                    });
                    self.emit(conn_id, SegmentRole::Ack, s, a, Vec::new(), false, now, &mut fx);
                } else if seg.seq + len == conn.next_ack {
                    // retransmission of the segment we last acknowledged
                    self.emit(conn_id, SegmentRole::Ack, conn.next_seq, conn.next_ack, Vec::new(), false, now, &mut fx);
                } else if seg.seq < conn.next_ack {
                    return Err(SegmentDrop::Replay);
                } else if self.config.secure {
                    return Err(SegmentDrop::OutOfPhase);
                } else {
                    self.emit(conn_id, SegmentRole::Ack, conn.next_seq, conn.next_ack, Vec::new(), false, now, &mut fx);
                }
            }
            (Phase::Established | Phase::FinWait, SegmentRole::Ack) => {
                let outstanding = conn.in_flight.as_ref().map(|s| {
                    let advance = if s.role == SegmentRole::Data { s.payload.len() as u64 } else { 1 };
                    (s.role, s.seq + advance)
                });
                match outstanding {
                    Some((SegmentRole::Data, expect)) if seg.ack == expect && conn.phase == Phase::Established => {
                        let c = self.conns.get_mut(&conn_id).expect("present");
                        c.in_flight = None;
                        c.generation += 1;
                        self.send_next(conn_id, now, &mut fx);
                    }
                    _ if seg.ack > conn.next_seq => {
                        // acknowledges data never sent
                        if self.config.secure {
                            return Err(SegmentDrop::BadAckNumber);
                        }
                        self.emit(conn_id, SegmentRole::Ack, conn.next_seq, conn.next_ack, Vec::new(), false, now, &mut fx);
                    }
                    _ => return Err(SegmentDrop::BadAckNumber),
                }
            }
            (Phase::Established, SegmentRole::Fin) => {
                if seg.seq != conn.next_ack {
                    return Err(SegmentDrop::BadAckNumber);
                }
                let c = self.conns.get_mut(&conn_id).expect("present");
                c.next_ack += 1;
                c.phase = Phase::LastAck;
                let (s, a) = (c.next_seq, c.next_ack);
                self.emit(conn_id, SegmentRole::FinAck, s, a, Vec::new(), true, now, &mut fx);
            }
            (Phase::LastAck, SegmentRole::Fin) => {
                if seg.seq + 1 != conn.next_ack {
                    return Err(SegmentDrop::Replay);
                }
                self.emit(conn_id, SegmentRole::FinAck, conn.next_seq, conn.next_ack, Vec::new(), true, now, &mut fx);
            }
            (Phase::FinWait, SegmentRole::FinAck) => {
                if seg.ack != conn.next_seq + 1 {
                    return Err(SegmentDrop::BadAckNumber);
                }
                let c = self.conns.get_mut(&conn_id).expect("present");
                c.next_seq += 1;
                c.next_ack = seg.seq + 1;
                let (s, a) = (c.next_seq, c.next_ack);
                self.emit(conn_id, SegmentRole::Ack, s, a, Vec::new(), false, now, &mut fx);
                self.close_final(conn_id, &mut fx);
            }
            (Phase::LastAck, SegmentRole::Ack) => {
                if seg.ack != conn.next_seq + 1 {
                    return Err(SegmentDrop::BadAckNumber);
                }
                self.close_final(conn_id, &mut fx);
            }
            _ => return Err(SegmentDrop::OutOfPhase),
        }
        Ok(fx)
    }

    fn close_final(&mut self, conn_id: ConnId, fx: &mut TcpEffects) {
        let c = self.conns.get_mut(&conn_id).expect("present");
        c.phase = Phase::ClosedFinal;
        c.in_flight = None;
        c.generation += 1;
        c.key = None;
        fx.events.push(TcpEvent::Closed { conn: conn_id });
        if self.config.secure {
            fx.events.push(TcpEvent::DiscardKey { peer: conn_id.0 });
        }
    }

    /// Sends the next data segment, or starts the close once everything
    /// queued has been acknowledged.
    fn send_next(&mut self, conn_id: ConnId, now: Tick, fx: &mut TcpEffects) {
        let c = self.conns.get_mut(&conn_id).expect("present");
        if !c.initiator {
            return;
        }
        if c.sent_total < c.to_send {
            let len = MSS.min(c.to_send - c.sent_total);
            let payload = payload_bytes(c.sent_total, len);
            let (seq, ack) = (c.next_seq, c.next_ack);
            c.sent_total += len;
            c.next_seq += len as u64;
            self.emit(conn_id, SegmentRole::Data, seq, ack, payload, true, now, fx);
        } else {
            fx.events.push(TcpEvent::SendComplete { conn: conn_id });
            if let Ok(more) = self.terminate(conn_id, now) {
                fx.sends.extend(more.sends);
                fx.timers.extend(more.timers);
                fx.events.extend(more.events);
            }
        }
    }

    pub fn on_timer(&mut self, timer: TcpTimer, now: Tick) -> TcpEffects {
        let TcpTimer::Retransmit { conn: conn_id, generation } = timer;
        let mut fx = TcpEffects::default();
        let max_retries = self.config.max_retries;
        let retransmit = self.config.retransmit_ticks;
        let Some(c) = self.conns.get_mut(&conn_id) else {
            return fx;
        };
        if c.generation != generation || c.in_flight.is_none() {
            return fx;
        }
        if c.retries < max_retries {
            c.retries += 1;
            c.generation += 1;
            let seg = c.in_flight.clone().expect("checked");
            fx.timers.push((
                now + retransmit,
                TcpTimer::Retransmit {
                    conn: conn_id,
                    generation: c.generation,
                },
            ));
            self.counters.segments_sent += 1;
            self.audit.push(Audit {
                tick: now,
                conn: conn_id,
                kind: AuditKind::Sent(seg.role),
            });
            fx.sends.push((conn_id.0, seg));
            return fx;
        }
        let phase = c.phase;
        if phase == Phase::LastAck {
            self.close_final(conn_id, &mut fx);
            return fx;
        }
        c.phase = Phase::ClosedFinal;
        c.in_flight = None;
        c.half_open_since = None;
        c.key = None;
        if phase == Phase::SynReceived {
            // never established: forget it entirely
            self.conns.remove(&conn_id);
        }
        fx.events.push(TcpEvent::Failed { conn: conn_id });
        if self.config.secure && phase != Phase::SynReceived {
            fx.events.push(TcpEvent::DiscardKey { peer: conn_id.0 });
        }
        fx
    }
}

/// Tag a segment under `key`; used by tests and by attackers guessing tags.
pub fn tag_segment(mut seg: Segment, key: &SessionKey) -> Segment {
    seg.tag = mac_tag(&seg.tag_input(), key);
    seg
}

/// An all-zero tag, what a keyless sender can put on the wire.
pub fn blank_tag() -> MacTag {
    MacTag::default()
}
