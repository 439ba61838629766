//! Attacker behaviours and the verdict oracle.
//!
//! Attackers are external: they hold keys of their own but are not in the
//! identity directory and never learn an honest node's private keys. Each
//! behaviour either mutates routing messages it overhears, forges new ones,
//! or injects transport segments.
//!
//! Every transmission an attacker makes is marked tainted by the runtime,
//! and taint follows anything an honest node derives from it. The verdict
//! is then read off the run: did a tainted input reach the attack's goal,
//! and if not, was a tainted input dropped for the reason the defence
//! predicts.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;
use std::sync::Arc;

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{rsa_sign_first, sas_aggregate_step, sas_unwind_to_first, AggregateSignature, Digest, MacTag};
use crate::identity::{NodeAddr, NodeKeys, Registry};
use crate::simnet::{Tick, Topology};
use crate::wire::{CoreBody, DataPacket, Packet, RouteCore, RouteKind, RouteMessage, Segment, SegmentRole, SignatureMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    SeqInflate,
    HopShorten,
    Redirect,
    Tunnel,
    Impersonate,
    FakeRerr,
    SynFlood,
    SessionHijack,
    AckInject,
}

impl AttackKind {
    pub const ALL: [AttackKind; 9] = [
        AttackKind::SeqInflate,
        AttackKind::HopShorten,
        AttackKind::Redirect,
        AttackKind::Tunnel,
        AttackKind::Impersonate,
        AttackKind::FakeRerr,
        AttackKind::SynFlood,
        AttackKind::SessionHijack,
        AttackKind::AckInject,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AttackKind::SeqInflate => "seq_inflate",
            AttackKind::HopShorten => "hop_shorten",
            AttackKind::Redirect => "redirect",
            AttackKind::Tunnel => "tunnel",
            AttackKind::Impersonate => "impersonate",
            AttackKind::FakeRerr => "fake_rerr",
            AttackKind::SynFlood => "syn_flood",
            AttackKind::SessionHijack => "session_hijack",
            AttackKind::AckInject => "ack_inject",
        }
    }

    /// Drop reason that counts as detection, if any.
    pub fn detection_reason(self) -> Option<&'static str> {
        match self {
            AttackKind::SeqInflate
            | AttackKind::HopShorten
            | AttackKind::Redirect
            | AttackKind::Impersonate
            | AttackKind::FakeRerr => Some("verify_failed"),
            AttackKind::SessionHijack | AttackKind::AckInject => Some("tag_mismatch"),
            AttackKind::Tunnel | AttackKind::SynFlood => None,
        }
    }

    fn target_count(self) -> usize {
        match self {
            AttackKind::HopShorten | AttackKind::Tunnel => 0,
            AttackKind::SeqInflate | AttackKind::Redirect | AttackKind::Impersonate | AttackKind::SynFlood => 1,
            AttackKind::SessionHijack | AttackKind::AckInject => 2,
            AttackKind::FakeRerr => 3,
        }
    }

    /// Kinds driven by the clock rather than by overheard traffic.
    fn periodic(self) -> bool {
        matches!(
            self,
            AttackKind::FakeRerr | AttackKind::SynFlood | AttackKind::SessionHijack | AttackKind::AckInject
        )
    }
}

fn default_rate() -> u32 {
    50
}

fn default_amount() -> u64 {
    100
}

fn default_duration() -> Tick {
    100
}

/// One attack attached to a scenario.
///
/// `targets` by kind: seq_inflate `[dst]`; redirect and impersonate
/// `[victim]`; syn_flood `[victim]`; session_hijack and ack_inject
/// `[src, dst]` of the flow; fake_rerr `[src, dst, claimed_originator]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub attackers: Vec<u32>,
    #[serde(default)]
    pub targets: Vec<u32>,
    /// Segments per tick for floods.
    #[serde(default = "default_rate")]
    pub rate: u32,
    /// Sequence-number inflation, or ack offset for injected ACKs.
    #[serde(default = "default_amount")]
    pub amount: u64,
    #[serde(default)]
    pub start: Tick,
    /// Ticks the attack stays active from `start`.
    #[serde(default = "default_duration")]
    pub duration: Tick,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, attackers: Vec<u32>, targets: Vec<u32>) -> Self {
        AttackSpec {
            kind,
            attackers,
            targets,
            rate: default_rate(),
            amount: default_amount(),
            start: 0,
            duration: default_duration(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let want = if self.kind == AttackKind::Tunnel { 2 } else { 1 };
        if self.attackers.len() != want {
            return Err(format!(
                "{} needs exactly {want} attacker id(s), got {}",
                self.kind.label(),
                self.attackers.len()
            ));
        }
        if self.attackers.len() == 2 && self.attackers[0] == self.attackers[1] {
            return Err("tunnel endpoints must differ".into());
        }
        if self.targets.len() != self.kind.target_count() {
            return Err(format!(
                "{} needs {} target(s), got {}",
                self.kind.label(),
                self.kind.target_count(),
                self.targets.len()
            ));
        }
        Ok(())
    }

    pub fn stop(&self) -> Tick {
        self.start.saturating_add(self.duration)
    }

    pub fn is_active(&self, now: Tick) -> bool {
        now >= self.start && now < self.stop()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Succeeded,
    Detected,
    Neutralized,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Succeeded => "succeeded",
            Verdict::Detected => "detected",
            Verdict::Neutralized => "neutralized",
        }
    }
}

/// What a run showed about tainted traffic at honest nodes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub tainted_route_installs: u64,
    pub tainted_rerrs_accepted: u64,
    pub tainted_payload_bytes: u64,
    pub responses_to_tainted_segments: u64,
    /// Peak half-open occupancy at each flood victim.
    pub victim_peak_half_open: u64,
    pub half_open_capacity: u64,
    /// Drops of tainted packets at honest nodes, by reason.
    pub tainted_drops: BTreeMap<String, u64>,
}

impl Evidence {
    pub fn goal_reached(&self, kind: AttackKind) -> bool {
        match kind {
            AttackKind::SeqInflate
            | AttackKind::HopShorten
            | AttackKind::Redirect
            | AttackKind::Tunnel
            | AttackKind::Impersonate => self.tainted_route_installs > 0,
            AttackKind::FakeRerr => self.tainted_rerrs_accepted > 0,
            AttackKind::SynFlood => {
                self.half_open_capacity > 0 && self.victim_peak_half_open >= self.half_open_capacity
            }
            AttackKind::SessionHijack => self.tainted_payload_bytes > 0,
            AttackKind::AckInject => self.responses_to_tainted_segments > 0,
        }
    }
}

/// Succeeded if the goal state occurred; otherwise detected if a tainted
/// packet was dropped for the matching reason; otherwise neutralized.
pub fn oracle_outcome(kind: AttackKind, evidence: &Evidence) -> Verdict {
    if evidence.goal_reached(kind) {
        return Verdict::Succeeded;
    }
    match kind.detection_reason() {
        Some(r) if evidence.tainted_drops.get(r).copied().unwrap_or(0) > 0 => Verdict::Detected,
        _ => Verdict::Neutralized,
    }
}

/// A transport segment seen on the air by the simulator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Overheard {
    pub tick: Tick,
    pub from: NodeAddr,
    pub to: NodeAddr,
    pub packet: DataPacket,
}

pub type SniffLog = Rc<RefCell<Vec<Overheard>>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AttackOut {
    Broadcast(Vec<u8>),
    Unicast(NodeAddr, Vec<u8>),
    Tunnel(NodeAddr, Vec<u8>),
}

pub struct Attacker {
    spec: AttackSpec,
    keys: NodeKeys,
    /// The public directory, which every participant holds.
    registry: Arc<Registry>,
    partner: Option<NodeAddr>,
    seen: BTreeSet<(RouteKind, Digest, u64)>,
    upstream: BTreeMap<(Digest, u64), NodeAddr>,
    sniff: SniffLog,
    cursor: usize,
    rng: ChaCha20Rng,
    next_port: u64,
    fired: bool,
}

impl Attacker {
    pub fn new(spec: AttackSpec, keys: NodeKeys, registry: Arc<Registry>, sniff: SniffLog, seed: u64) -> Self {
        let me = keys.identity.ip;
        let partner = (spec.kind == AttackKind::Tunnel)
            .then(|| spec.attackers.iter().map(|&a| NodeAddr(a)).find(|&a| a != me))
            .flatten();
        Attacker {
            spec,
            keys,
            registry,
            partner,
            seen: BTreeSet::new(),
            upstream: BTreeMap::new(),
            sniff,
            cursor: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
            next_port: 1024,
            fired: false,
        }
    }

    pub fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    pub fn addr(&self) -> NodeAddr {
        self.keys.identity.ip
    }

    /// First tick of the periodic schedule, for clock-driven kinds.
    pub fn first_tick(&self) -> Option<Tick> {
        self.spec.kind.periodic().then_some(self.spec.start)
    }

    fn target(&self, i: usize) -> Option<(NodeAddr, Digest)> {
        let addr = NodeAddr(*self.spec.targets.get(i)?);
        self.registry.by_ip(addr).map(|e| (addr, e.id))
    }

    /// Reacts to a packet heard from `from`.
    pub fn on_packet(&mut self, from: NodeAddr, bytes: &[u8], now: Tick) -> Vec<AttackOut> {
        if !self.spec.is_active(now) {
            return Vec::new();
        }
        let Ok(Packet::Route(msg)) = Packet::decode(bytes) else {
            return Vec::new();
        };
        if self.partner == Some(from) {
            return self.tunnel_exit(msg);
        }
        let key = (msg.kind(), msg.core.originator(), msg.core.bct_id);
        if msg.kind() == RouteKind::Rreq {
            if !self.seen.insert(key) {
                return Vec::new();
            }
            self.upstream.entry((msg.core.src_id, msg.core.bct_id)).or_insert(from);
        }
        match (self.spec.kind, msg.kind()) {
            (AttackKind::SeqInflate, RouteKind::Rreq) => self.forge_rrep(&msg, from),
            (AttackKind::HopShorten, RouteKind::Rreq) => {
                let mut m = msg;
                m.hops.clear();
                m.aggregate.signer_count = m.aggregate.signer_count.min(1);
                m.aggregate.overflow_bits.clear();
                vec![AttackOut::Broadcast(m.encode())]
            }
            (AttackKind::Redirect, RouteKind::Rreq) => {
                let Some((ip, id)) = self.target(0) else {
                    return Vec::new();
                };
                let mut m = msg;
                m.core.src_ip = ip;
                m.core.src_id = id;
                self.seen.insert((RouteKind::Rreq, id, m.core.bct_id));
                vec![AttackOut::Broadcast(m.encode())]
            }
            (AttackKind::Impersonate, RouteKind::Rreq) => self.impersonate(msg),
            (AttackKind::Tunnel, RouteKind::Rreq) => match self.partner {
                Some(p) => vec![AttackOut::Tunnel(p, msg.encode())],
                None => Vec::new(),
            },
            (AttackKind::Tunnel, RouteKind::Rrep) => match self.partner {
                Some(p) => vec![AttackOut::Tunnel(p, msg.encode())],
                None => Vec::new(),
            },
            _ => Vec::new(),
        }
    }

    fn tunnel_exit(&mut self, msg: RouteMessage) -> Vec<AttackOut> {
        match msg.kind() {
            RouteKind::Rreq => {
                self.seen.insert((RouteKind::Rreq, msg.core.src_id, msg.core.bct_id));
                vec![AttackOut::Broadcast(msg.encode())]
            }
            RouteKind::Rrep => match self.upstream.get(&(msg.core.src_id, msg.core.bct_id)) {
                Some(&up) => vec![AttackOut::Unicast(up, msg.encode())],
                None => Vec::new(),
            },
            RouteKind::Rerr => Vec::new(),
        }
    }

    /// Signs as if first in a chain, with the attacker's own key.
    fn self_sign(&self, msg: &mut RouteMessage) {
        if msg.signature_mode != SignatureMode::Unsigned {
            let h = msg
                .signed_digest(0, &self.keys.signing.public())
                .expect("index 0");
            msg.aggregate = rsa_sign_first(&h, &self.keys.signing);
        }
    }

    fn forge_rrep(&mut self, rreq: &RouteMessage, from: NodeAddr) -> Vec<AttackOut> {
        let Some((ip, id)) = self.target(0) else {
            return Vec::new();
        };
        if rreq.core.dst_ip != ip {
            return Vec::new();
        }
        let half = if rreq.signature_mode == SignatureMode::Unsigned {
            BigUint::default()
        } else {
            BigUint::from(self.rng.gen::<u64>() | 1)
        };
        let mut m = RouteMessage {
            core: RouteCore {
                src_ip: rreq.core.src_ip,
                src_id: rreq.core.src_id,
                src_seq: rreq.core.src_seq,
                bct_id: rreq.core.bct_id,
                dst_ip: ip,
                body: CoreBody::Rrep {
                    dst_seq: self.spec.amount,
                    dst_id: id,
                    encrypted_half: half,
                },
            },
            hops: Vec::new(),
            signature_mode: rreq.signature_mode,
            aggregate: AggregateSignature::default(),
            sec_level: rreq.sec_level,
        };
        self.self_sign(&mut m);
        vec![AttackOut::Unicast(from, m.encode())]
    }

    fn impersonate(&mut self, msg: RouteMessage) -> Vec<AttackOut> {
        let Some((_, victim)) = self.target(0) else {
            return Vec::new();
        };
        let mut m = msg.clone();
        let own = self.keys.signing.public();
        match m.signature_mode {
            SignatureMode::Unsigned => m.hops.push(victim),
            SignatureMode::AggregateFull => {
                m.hops.push(victim);
                let h = m.signed_digest(m.hops.len(), &own).expect("in range");
                m.aggregate = sas_aggregate_step(&msg.aggregate, &h, &self.keys.signing);
            }
            SignatureMode::SourcePlusLast => {
                // unwinding needs only public keys
                let signers: Vec<_> = msg
                    .signer_ids()
                    .iter()
                    .enumerate()
                    .filter_map(|(i, id)| {
                        let pk = self.registry.get(id).ok()?.signing_public.clone();
                        Some((msg.signed_digest(i, &pk).ok()?, pk))
                    })
                    .collect();
                let first = sas_unwind_to_first(&msg.aggregate, &signers)
                    .ok()
                    .flatten()
                    .unwrap_or_else(|| msg.aggregate.value.clone());
                m.hops = vec![victim];
                let h = m.signed_digest(1, &own).expect("in range");
                let base = AggregateSignature {
                    value: first,
                    overflow_bits: Vec::new(),
                    signer_count: 1,
                };
                m.aggregate = sas_aggregate_step(&base, &h, &self.keys.signing);
            }
        }
        vec![AttackOut::Broadcast(m.encode())]
    }

    /// Clock-driven behaviour. Returns the sends and the next tick to wake.
    pub fn on_tick(
        &mut self,
        now: Tick,
        topology: &Topology,
        mode: SignatureMode,
        sec_level: u8,
    ) -> (Vec<AttackOut>, Option<Tick>) {
        if now >= self.spec.stop() {
            return (Vec::new(), None);
        }
        let out = match self.spec.kind {
            AttackKind::FakeRerr => self.fake_rerr(mode, sec_level),
            AttackKind::SynFlood => self.syn_flood(topology),
            AttackKind::SessionHijack | AttackKind::AckInject => self.inject(now, topology),
            _ => Vec::new(),
        };
        let next = (now + 1 < self.spec.stop()).then_some(now + 1);
        (out, next)
    }

    fn fake_rerr(&mut self, mode: SignatureMode, sec_level: u8) -> Vec<AttackOut> {
        if self.fired {
            return Vec::new();
        }
        let (Some((src_ip, src_id)), Some((dst_ip, _)), Some((_, claimed))) =
            (self.target(0), self.target(1), self.target(2))
        else {
            return Vec::new();
        };
        self.fired = true;
        let mut m = RouteMessage {
            core: RouteCore {
                src_ip,
                src_id,
                src_seq: 0,
                bct_id: 1_000_000 + self.rng.gen_range(0..1_000_000u64),
                dst_ip,
                body: CoreBody::Rerr {
                    dst_seq: self.spec.amount,
                    originator_id: claimed,
                },
            },
            hops: Vec::new(),
            signature_mode: mode,
            aggregate: AggregateSignature::default(),
            sec_level,
        };
        self.self_sign(&mut m);
        vec![AttackOut::Broadcast(m.encode())]
    }

    fn syn_flood(&mut self, topology: &Topology) -> Vec<AttackOut> {
        let Some((victim_ip, victim_id)) = self.target(0) else {
            return Vec::new();
        };
        if !topology.is_up(self.addr(), victim_ip) {
            return Vec::new();
        }
        (0..self.spec.rate)
            .map(|_| {
                self.next_port += 1;
                let mut seg = Segment::new(SegmentRole::Syn, self.next_port, crate::tcp::LISTEN_PORT, self.rng.gen_range(0..1u64 << 32), 0);
                seg.tag = MacTag(self.rng.gen());
                let pkt = DataPacket {
                    src_ip: self.addr(),
                    src_id: self.keys.id(),
                    dst_ip: victim_ip,
                    dst_id: victim_id,
                    segment: seg,
                };
                AttackOut::Unicast(victim_ip, Packet::Data(pkt).encode())
            })
            .collect()
    }

    /// Forges one segment into the flow for every data segment overheard in
    /// radio range before this tick.
    fn inject(&mut self, now: Tick, topology: &Topology) -> Vec<AttackOut> {
        let (Some((src_ip, _)), Some((dst_ip, _))) = (self.target(0), self.target(1)) else {
            return Vec::new();
        };
        let me = self.addr();
        let in_range: BTreeSet<NodeAddr> = topology.neighbors(me).into_iter().chain([me]).collect();
        let log = self.sniff.borrow();
        let fresh: Vec<Overheard> = log[self.cursor..]
            .iter()
            .take_while(|o| o.tick < now)
            .cloned()
            .collect();
        drop(log);
        self.cursor += fresh.len();
        let mut out = Vec::new();
        for o in fresh {
            let p = &o.packet;
            let s = &p.segment;
            if !(in_range.contains(&o.from) || in_range.contains(&o.to))
                || p.src_ip != src_ip
                || p.dst_ip != dst_ip
                || s.role != SegmentRole::Data
            {
                continue;
            }
            let next_seq = s.seq + s.payload.len() as u64;
            let mut forged = match self.spec.kind {
                AttackKind::SessionHijack => {
                    let mut f = Segment::new(SegmentRole::Data, s.src_port, s.dst_port, next_seq, s.ack);
                    f.payload = b"HIJACKED".to_vec();
                    f
                }
                _ => Segment::new(SegmentRole::Ack, s.src_port, s.dst_port, next_seq, s.ack + self.spec.amount),
            };
            forged.tag = MacTag(self.rng.gen());
            let pkt = DataPacket {
                segment: forged,
                ..p.clone()
            };
            if topology.is_up(me, dst_ip) {
                out.push(AttackOut::Unicast(dst_ip, Packet::Data(pkt).encode()));
            }
        }
        out
    }
}
