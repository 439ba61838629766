//! Per-node secure AODV state machine.
//!
//! A node originates, forwards and answers route requests, maintains its
//! route table, agrees a Diffie-Hellman session key with the far end of
//! every discovery, and emits and relays signed route errors.
//!
//! The node never touches the network itself. Each handler returns an
//! [`Effects`] bundle (messages to send, timers to arm, events for the
//! caller) or a [`RouteDrop`] reason.
//!
//! Signing modes:
//! * sec_level 1: every forwarder appends its id and folds its signature into
//!   the aggregate; receivers unwind the whole chain.
//! * sec_level 0: the message carries at most one hop record. A forwarder
//!   recovers the originator's signature by unwinding the two-signer
//!   aggregate, drops the previous hop and binds itself to that signature.
//! * baseline: plain AODV, hop ids only and no signatures.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::{
    dh_public, dh_shared, rsa_decrypt, rsa_encrypt, rsa_sign_first, sas_aggregate_step,
    sas_unwind_to_first, AggregateSignature, CryptoError, DhParams, Digest, SessionKey,
};
use crate::identity::{NodeAddr, NodeKeys, Registry};
use crate::simnet::Tick;
use crate::wire::{CoreBody, RouteCore, RouteKind, RouteMessage, SignatureMode};

pub const DEFAULT_DISCOVERY_TIMEOUT: Tick = 40;
pub const DEFAULT_CACHE_EXPIRY: Tick = 400;
pub const DEFAULT_MAX_RETRIES: u32 = 2;

/// Where Diffie-Hellman parameters come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DhPolicy {
    /// Fresh safe prime, generator and exponents from the node's seeded RNG.
    Random { bits: usize },
    /// Fixed parameters, for reproducing worked examples.
    Pinned {
        p: BigUint,
        g: BigUint,
        initiator_r: BigUint,
        responder_r: BigUint,
    },
}

#[derive(Clone, Debug)]
pub struct NodeConfig {
    /// False runs plain AODV with no signatures or key exchange.
    pub secure: bool,
    pub sec_level: u8,
    pub discovery_timeout: Tick,
    pub cache_expiry: Tick,
    pub max_retries: u32,
    pub dh: DhPolicy,
    pub rng_seed: u64,
}

impl NodeConfig {
    pub fn secure(sec_level: u8, dh: DhPolicy, rng_seed: u64) -> Self {
        NodeConfig {
            secure: true,
            sec_level,
            discovery_timeout: DEFAULT_DISCOVERY_TIMEOUT,
            cache_expiry: DEFAULT_CACHE_EXPIRY,
            max_retries: DEFAULT_MAX_RETRIES,
            dh,
            rng_seed,
        }
    }

    pub fn baseline(rng_seed: u64) -> Self {
        NodeConfig {
            secure: false,
            sec_level: 0,
            dh: DhPolicy::Random { bits: 0 },
            ..Self::secure(0, DhPolicy::Random { bits: 0 }, rng_seed)
        }
    }

    pub fn signature_mode(&self) -> SignatureMode {
        match (self.secure, self.sec_level) {
            (false, _) => SignatureMode::Unsigned,
            (true, 0) => SignatureMode::SourcePlusLast,
            (true, _) => SignatureMode::AggregateFull,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RouteDrop {
    Duplicate,
    VerifyFailed,
    UnknownIdentity,
    IdMismatch,
    Malformed,
    NoPending,
    NoRoute,
}

impl RouteDrop {
    pub fn label(self) -> &'static str {
        match self {
            RouteDrop::Duplicate => "duplicate",
            RouteDrop::VerifyFailed => "verify_failed",
            RouteDrop::UnknownIdentity => "unknown_identity",
            RouteDrop::IdMismatch => "id_mismatch",
            RouteDrop::Malformed => "malformed",
            RouteDrop::NoPending => "no_pending",
            RouteDrop::NoRoute => "no_route",
        }
    }
}

#[derive(Debug, Error)]
pub enum AodvError {
    #[error("destination {0} is not in the registry")]
    UnknownDestination(Digest),
    #[error("route to {0} is already active")]
    RouteActive(Digest),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteState {
    Active,
    Broken,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteEntry {
    pub next_hop: NodeAddr,
    pub hop_count: usize,
    pub dest_seq: u64,
    pub state: RouteState,
    /// Sources whose traffic to this destination goes through us. Contains
    /// our own id on the node that originated the discovery.
    pub precursors: BTreeSet<Digest>,
}

#[derive(Clone, Debug)]
pub struct PendingDiscovery {
    pub bct_id: u64,
    pub dst_id: Digest,
    pub dh: Option<DhParams>,
    pub issued_at: Tick,
    pub first_issued_at: Tick,
    pub retries: u32,
    pub completed: bool,
}

/// What a receiver checked before acting on a routing message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    pub kind: RouteKind,
    pub mode: SignatureMode,
    /// Signers whose contributions were unwound, originator first.
    pub signers_verified: Vec<Digest>,
    /// Registry identity bound to the link-layer sender and matched against
    /// the last signer.
    pub upstream: Option<Digest>,
    originator_sigma: Option<BigUint>,
}

impl Transcript {
    /// True when every check the signing mode calls for passed.
    pub fn fully_verified(&self, msg_signers: usize) -> bool {
        match self.mode {
            SignatureMode::Unsigned => false,
            _ => self.upstream.is_some() && self.signers_verified.len() == msg_signers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outbound {
    Broadcast(RouteMessage),
    Unicast(NodeAddr, RouteMessage),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AodvTimer {
    DiscoveryTimeout { dst: Digest, bct_id: u64 },
}

#[derive(Clone, Debug)]
pub enum RouteEvent {
    RouteInstalled {
        dest: Digest,
        next_hop: NodeAddr,
        hop_count: usize,
        dest_seq: u64,
        transcript: Transcript,
    },
    /// Source side: a discovery finished. `key` is `None` in baseline mode.
    DiscoveryComplete {
        dst: Digest,
        bct_id: u64,
        latency: Tick,
        key: Option<SessionKey>,
    },
    /// Destination side: answered a request and derived the session key.
    DiscoveryAnswered {
        peer: Digest,
        bct_id: u64,
        key: Option<SessionKey>,
    },
    DiscoveryFailed {
        dst: Digest,
    },
    /// An authenticated RERR was accepted at this node.
    RerrAccepted {
        originator: Digest,
        dst: Digest,
    },
    /// This node's own route to `dst` broke; a new discovery follows.
    RouteBroken {
        dst: Digest,
    },
}

#[derive(Debug, Default)]
pub struct Effects {
    pub sends: Vec<Outbound>,
    pub timers: Vec<(Tick, AodvTimer)>,
    pub events: Vec<RouteEvent>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub signs: u64,
    pub verifies: u64,
    pub routes_installed: u64,
    pub drops: BTreeMap<&'static str, u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum SeenKey {
    Rreq(Digest, u64),
    Rerr(Digest, u64),
}

pub struct AodvNode {
    keys: NodeKeys,
    registry: Arc<Registry>,
    config: NodeConfig,
    seq: u64,
    bct_id: u64,
    rerr_id: u64,
    routes: BTreeMap<Digest, RouteEntry>,
    pending: BTreeMap<Digest, PendingDiscovery>,
    seen: BTreeMap<SeenKey, Tick>,
    sessions: BTreeMap<Digest, (u64, SessionKey)>,
    rng: ChaCha20Rng,
    counters: Counters,
}

impl AodvNode {
    pub fn new(keys: NodeKeys, registry: Arc<Registry>, config: NodeConfig) -> Self {
        let rng = ChaCha20Rng::seed_from_u64(config.rng_seed);
        AodvNode {
            keys,
            registry,
            config,
            seq: 0,
            bct_id: 0,
            rerr_id: 0,
            routes: BTreeMap::new(),
            pending: BTreeMap::new(),
            seen: BTreeMap::new(),
            sessions: BTreeMap::new(),
            rng,
            counters: Counters::default(),
        }
    }

    pub fn id(&self) -> Digest {
        self.keys.id()
    }

    pub fn addr(&self) -> NodeAddr {
        self.keys.identity.ip
    }

    pub fn keys(&self) -> &NodeKeys {
        &self.keys
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn bct_id(&self) -> u64 {
        self.bct_id
    }

    pub fn route(&self, dest: &Digest) -> Option<&RouteEntry> {
        self.routes.get(dest)
    }

    pub fn routes(&self) -> &BTreeMap<Digest, RouteEntry> {
        &self.routes
    }

    pub fn active_next_hop(&self, dest: &Digest) -> Option<NodeAddr> {
        self.routes
            .get(dest)
            .filter(|r| r.state == RouteState::Active)
            .map(|r| r.next_hop)
    }

    pub fn pending(&self, dest: &Digest) -> Option<&PendingDiscovery> {
        self.pending.get(dest)
    }

    pub fn session_key(&self, peer: &Digest) -> Option<&SessionKey> {
        self.sessions.get(peer).map(|(_, k)| k)
    }

    pub fn session(&self, peer: &Digest) -> Option<(u64, &SessionKey)> {
        self.sessions.get(peer).map(|(b, k)| (*b, k))
    }

    pub fn discard_session(&mut self, peer: &Digest) {
        self.sessions.remove(peer);
    }

    fn count_drop(&mut self, reason: RouteDrop) -> RouteDrop {
        *self.counters.drops.entry(reason.label()).or_default() += 1;
        reason
    }

    fn purge_seen(&mut self, now: Tick) {
        self.seen.retain(|_, expiry| *expiry >= now);
    }

    fn sign_as_originator(&mut self, msg: &mut RouteMessage) {
        if msg.signature_mode == SignatureMode::Unsigned {
            return;
        }
        let h = msg
            .signed_digest(0, &self.keys.signing.public())
            .expect("index 0 is always in range");
        msg.aggregate = rsa_sign_first(&h, &self.keys.signing);
        self.counters.signs += 1;
    }

    fn new_message(&self, core: RouteCore) -> RouteMessage {
        RouteMessage {
            core,
            hops: Vec::new(),
            signature_mode: self.config.signature_mode(),
            aggregate: AggregateSignature::default(),
            sec_level: self.config.sec_level,
        }
    }

    fn draw_dh(&mut self, initiator: bool, p: Option<(&BigUint, &BigUint)>) -> DhParams {
        match (&self.config.dh, p) {
            (
                DhPolicy::Pinned {
                    p,
                    g,
                    initiator_r,
                    responder_r,
                },
                _,
            ) => DhParams::new(
                p.clone(),
                g.clone(),
                if initiator { initiator_r.clone() } else { responder_r.clone() },
            ),
            (DhPolicy::Random { .. }, Some((p, g))) => {
                DhParams::with_fresh_exponent(p, g, &mut self.rng)
            }
            (DhPolicy::Random { bits }, None) => DhParams::generate(&mut self.rng, *bits),
        }
    }

    /// Starts a route discovery towards `dst`.
    pub fn originate_discovery(&mut self, dst: Digest, now: Tick) -> Result<Effects, AodvError> {
        if self.active_next_hop(&dst).is_some() {
            return Err(AodvError::RouteActive(dst));
        }
        let (retries, first_issued_at) = match self.pending.get(&dst) {
            Some(p) if !p.completed => (p.retries, p.first_issued_at),
            _ => (0, now),
        };
        self.issue_rreq(dst, now, retries, first_issued_at)
    }

    fn issue_rreq(
        &mut self,
        dst: Digest,
        now: Tick,
        retries: u32,
        first_issued_at: Tick,
    ) -> Result<Effects, AodvError> {
        let target = self
            .registry
            .get(&dst)
            .map_err(|_| AodvError::UnknownDestination(dst))?
            .clone();
        let (dh, body) = if self.config.secure {
            let dh = self.draw_dh(true, None);
            let r1 = dh_public(&dh);
            let r2 = rsa_encrypt(&r1, &target.encryption_public)?;
            let body = CoreBody::Rreq {
                dh_prime: dh.p.clone(),
                dh_generator: dh.g.clone(),
                encrypted_half: r2,
            };
            (Some(dh), body)
        } else {
            let zero = BigUint::default();
            let body = CoreBody::Rreq {
                dh_prime: zero.clone(),
                dh_generator: zero.clone(),
                encrypted_half: zero,
            };
            (None, body)
        };
        self.seq += 1;
        self.bct_id += 1;
        let core = RouteCore {
            src_ip: self.addr(),
            src_id: self.id(),
            src_seq: self.seq,
            bct_id: self.bct_id,
            dst_ip: target.ip,
            body,
        };
        let mut msg = self.new_message(core);
        self.sign_as_originator(&mut msg);
        self.seen.insert(
            SeenKey::Rreq(self.id(), self.bct_id),
            now + self.config.cache_expiry,
        );
        self.pending.insert(
            dst,
            PendingDiscovery {
                bct_id: self.bct_id,
                dst_id: dst,
                dh,
                issued_at: now,
                first_issued_at,
                retries,
                completed: false,
            },
        );
        Ok(Effects {
            sends: vec![Outbound::Broadcast(msg)],
            timers: vec![(
                now + self.config.discovery_timeout,
                AodvTimer::DiscoveryTimeout {
                    dst,
                    bct_id: self.bct_id,
                },
            )],
            events: Vec::new(),
        })
    }

    pub fn on_timer(&mut self, timer: AodvTimer, now: Tick) -> Effects {
        let AodvTimer::DiscoveryTimeout { dst, bct_id } = timer;
        let Some(p) = self.pending.get(&dst) else {
            return Effects::default();
        };
        if p.bct_id != bct_id {
            return Effects::default();
        }
        if p.completed {
            self.pending.remove(&dst);
            return Effects::default();
        }
        if p.retries < self.config.max_retries {
            let (retries, first) = (p.retries + 1, p.first_issued_at);
            if let Ok(e) = self.issue_rreq(dst, now, retries, first) {
                return e;
            }
        }
        self.pending.remove(&dst);
        Effects {
            events: vec![RouteEvent::DiscoveryFailed { dst }],
            ..Effects::default()
        }
    }

    /// Checks the signature chain and the upstream binding.
    ///
    /// The chain is checked before the binding so that a message altered in
    /// transit is reported as a verification failure.
    fn authenticate(&mut self, msg: &RouteMessage, from: NodeAddr) -> Result<Transcript, RouteDrop> {
        let mode = self.config.signature_mode();
        if msg.signature_mode != mode || msg.sec_level != self.config.sec_level {
            return Err(RouteDrop::Malformed);
        }
        let mut transcript = Transcript {
            kind: msg.kind(),
            mode,
            signers_verified: Vec::new(),
            upstream: None,
            originator_sigma: None,
        };
        if mode == SignatureMode::Unsigned {
            return Ok(transcript);
        }
        if mode == SignatureMode::SourcePlusLast && msg.hops.len() > 1 {
            return Err(RouteDrop::Malformed);
        }
        let ids = msg.signer_ids();
        let mut signers = Vec::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            let key = self
                .registry
                .get(id)
                .map_err(|_| RouteDrop::UnknownIdentity)?
                .signing_public
                .clone();
            let h = msg.signed_digest(i, &key).map_err(|_| RouteDrop::Malformed)?;
            signers.push((h, key));
        }
        self.counters.verifies += signers.len() as u64;
        let sigma = match sas_unwind_to_first(&msg.aggregate, &signers) {
            Ok(Some(s)) => s,
            _ => return Err(RouteDrop::VerifyFailed),
        };
        let upstream = self.registry.by_ip(from).map(|e| e.id);
        if upstream != Some(msg.last_signer()) {
            return Err(RouteDrop::IdMismatch);
        }
        transcript.signers_verified = ids;
        transcript.upstream = upstream;
        transcript.originator_sigma = Some(sigma);
        Ok(transcript)
    }

    /// Copy of `msg` with this node added as a hop, signed per mode.
    fn extend(&mut self, msg: &RouteMessage, transcript: &Transcript) -> RouteMessage {
        let mut out = msg.clone();
        let me = self.id();
        let pk = self.keys.signing.public();
        match msg.signature_mode {
            SignatureMode::Unsigned => out.hops.push(me),
            SignatureMode::AggregateFull => {
                out.hops.push(me);
                let h = out
                    .signed_digest(out.hops.len(), &pk)
                    .expect("own index in range");
                out.aggregate = sas_aggregate_step(&msg.aggregate, &h, &self.keys.signing);
                self.counters.signs += 1;
            }
            SignatureMode::SourcePlusLast => {
                out.hops = vec![me];
                let h = out.signed_digest(1, &pk).expect("own index in range");
                let base = AggregateSignature {
                    value: transcript
                        .originator_sigma
                        .clone()
                        .expect("authenticated message"),
                    overflow_bits: Vec::new(),
                    signer_count: 1,
                };
                out.aggregate = sas_aggregate_step(&base, &h, &self.keys.signing);
                self.counters.signs += 1;
            }
        }
        out
    }

    /// Applies the route update rule; returns whether the entry changed.
    #[allow(clippy::too_many_arguments)]
    fn update_route(
        &mut self,
        dest: Digest,
        next_hop: NodeAddr,
        hop_count: usize,
        dest_seq: u64,
        transcript: &Transcript,
        effects: &mut Effects,
    ) -> bool {
        if dest == self.id() {
            return false;
        }
        let replace = match self.routes.get(&dest) {
            None => true,
            Some(r) => {
                r.state == RouteState::Broken
                    || dest_seq > r.dest_seq
                    || (dest_seq == r.dest_seq && hop_count < r.hop_count)
            }
        };
        if !replace {
            return false;
        }
        let precursors = self
            .routes
            .remove(&dest)
            .map(|r| r.precursors)
            .unwrap_or_default();
        self.routes.insert(
            dest,
            RouteEntry {
                next_hop,
                hop_count,
                dest_seq,
                state: RouteState::Active,
                precursors,
            },
        );
        self.counters.routes_installed += 1;
        effects.events.push(RouteEvent::RouteInstalled {
            dest,
            next_hop,
            hop_count,
            dest_seq,
            transcript: transcript.clone(),
        });
        true
    }

    /// Entry point for every routing message delivered to this node.
    pub fn handle(&mut self, msg: &RouteMessage, from: NodeAddr, now: Tick) -> Result<Effects, RouteDrop> {
        self.purge_seen(now);
        let result = match msg.kind() {
            RouteKind::Rreq => self.handle_rreq(msg, from, now),
            RouteKind::Rrep => self.handle_rrep(msg, from, now),
            RouteKind::Rerr => self.handle_rerr(msg, from, now),
        };
        result.map_err(|r| self.count_drop(r))
    }

    fn handle_rreq(&mut self, msg: &RouteMessage, from: NodeAddr, now: Tick) -> Result<Effects, RouteDrop> {
        let key = SeenKey::Rreq(msg.core.src_id, msg.core.bct_id);
        if msg.core.src_id == self.id() || self.seen.contains_key(&key) {
            return Err(RouteDrop::Duplicate);
        }
        let transcript = self.authenticate(msg, from)?;
        self.seen.insert(key, now + self.config.cache_expiry);

        let mut effects = Effects::default();
        self.update_route(
            msg.core.src_id,
            from,
            msg.hops.len() + 1,
            msg.core.src_seq,
            &transcript,
            &mut effects,
        );
        if msg.core.dst_ip == self.addr() {
            let reply = self.answer_discovery(msg, &mut effects)?;
            effects.sends.push(Outbound::Unicast(from, reply));
        } else {
            let fwd = self.extend(msg, &transcript);
            effects.sends.push(Outbound::Broadcast(fwd));
        }
        Ok(effects)
    }

    fn answer_discovery(&mut self, rreq: &RouteMessage, effects: &mut Effects) -> Result<RouteMessage, RouteDrop> {
        let CoreBody::Rreq {
            dh_prime,
            dh_generator,
            encrypted_half,
        } = &rreq.core.body
        else {
            unreachable!("called on RREQ only");
        };
        let source = self
            .registry
            .get(&rreq.core.src_id)
            .map_err(|_| RouteDrop::UnknownIdentity)?
            .clone();
        let (key, r4) = if self.config.secure {
            if dh_prime <= &BigUint::from(2u32) || dh_generator >= dh_prime {
                return Err(RouteDrop::Malformed);
            }
            let peer_half =
                rsa_decrypt(encrypted_half, &self.keys.encryption).map_err(|_| RouteDrop::Malformed)?;
            let dh = self.draw_dh(false, Some((dh_prime, dh_generator)));
            let key = dh_shared(&peer_half, &dh).map_err(|_| RouteDrop::Malformed)?;
            let r3 = dh_public(&dh);
            let r4 = rsa_encrypt(&r3, &source.encryption_public).map_err(|_| RouteDrop::Malformed)?;
            (Some(key), r4)
        } else {
            (None, BigUint::default())
        };
        self.seq += 1;
        let core = RouteCore {
            src_ip: rreq.core.src_ip,
            src_id: rreq.core.src_id,
            src_seq: rreq.core.src_seq,
            bct_id: rreq.core.bct_id,
            dst_ip: self.addr(),
            body: CoreBody::Rrep {
                dst_seq: self.seq,
                dst_id: self.id(),
                encrypted_half: r4,
            },
        };
        let mut reply = self.new_message(core);
        self.sign_as_originator(&mut reply);
        if let Some(k) = &key {
            self.sessions
                .insert(rreq.core.src_id, (rreq.core.bct_id, k.clone()));
        }
        effects.events.push(RouteEvent::DiscoveryAnswered {
            peer: rreq.core.src_id,
            bct_id: rreq.core.bct_id,
            key,
        });
        Ok(reply)
    }

    fn handle_rrep(&mut self, msg: &RouteMessage, from: NodeAddr, now: Tick) -> Result<Effects, RouteDrop> {
        let CoreBody::Rrep {
            dst_seq,
            dst_id,
            encrypted_half,
        } = &msg.core.body
        else {
            unreachable!("dispatched on kind");
        };
        if *dst_id == self.id() {
            return Err(RouteDrop::Duplicate);
        }
        let at_source = msg.core.src_id == self.id();
        if at_source {
            match self.pending.get(dst_id) {
                Some(p) if p.bct_id == msg.core.bct_id => {}
                _ => return Err(RouteDrop::NoPending),
            }
        }
        let transcript = self.authenticate(msg, from)?;
        let mut effects = Effects::default();

        if at_source {
            let pending = self.pending.get(dst_id).expect("checked above").clone();
            let mut key = None;
            if !pending.completed {
                if let Some(dh) = &pending.dh {
                    let half = rsa_decrypt(encrypted_half, &self.keys.encryption)
                        .map_err(|_| RouteDrop::Malformed)?;
                    key = Some(dh_shared(&half, dh).map_err(|_| RouteDrop::Malformed)?);
                }
            }
            self.update_route(*dst_id, from, msg.hops.len() + 1, *dst_seq, &transcript, &mut effects);
            if !pending.completed {
                let me = self.id();
                if let Some(r) = self.routes.get_mut(dst_id) {
                    r.precursors.insert(me);
                }
                if let Some(k) = &key {
                    self.sessions.insert(*dst_id, (pending.bct_id, k.clone()));
                }
                self.pending.get_mut(dst_id).expect("present").completed = true;
                effects.events.push(RouteEvent::DiscoveryComplete {
                    dst: *dst_id,
                    bct_id: pending.bct_id,
                    latency: now - pending.first_issued_at,
                    key,
                });
            }
            return Ok(effects);
        }

        let Some(back) = self.active_next_hop(&msg.core.src_id) else {
            return Err(RouteDrop::NoRoute);
        };
        self.update_route(*dst_id, from, msg.hops.len() + 1, *dst_seq, &transcript, &mut effects);
        if let Some(r) = self.routes.get_mut(dst_id) {
            r.precursors.insert(msg.core.src_id);
        }
        let fwd = self.extend(msg, &transcript);
        effects.sends.push(Outbound::Unicast(back, fwd));
        Ok(effects)
    }

    /// Called when a unicast to `neighbor` failed because the link is down.
    /// Marks every route through it broken, sends a signed RERR to each
    /// affected upstream source and restarts our own discoveries.
    pub fn link_broken(&mut self, neighbor: NodeAddr, now: Tick) -> Effects {
        let me = self.id();
        let mut effects = Effects::default();
        let affected: Vec<Digest> = self
            .routes
            .iter()
            .filter(|(_, r)| r.next_hop == neighbor && r.state == RouteState::Active)
            .map(|(d, _)| *d)
            .collect();
        let mut rediscover = Vec::new();
        for dest in affected {
            let entry = self.routes.get_mut(&dest).expect("listed");
            entry.state = RouteState::Broken;
            let precursors: Vec<Digest> = entry.precursors.iter().copied().collect();
            let dest_seq = entry.dest_seq;
            for source in precursors {
                if source == me {
                    rediscover.push(dest);
                    continue;
                }
                let Some(back) = self.active_next_hop(&source) else {
                    continue;
                };
                let (Ok(src), Ok(dst)) = (self.registry.get(&source), self.registry.get(&dest)) else {
                    continue;
                };
                self.rerr_id += 1;
                let core = RouteCore {
                    src_ip: src.ip,
                    src_id: source,
                    src_seq: 0,
                    bct_id: self.rerr_id,
                    dst_ip: dst.ip,
                    body: CoreBody::Rerr {
                        dst_seq: dest_seq,
                        originator_id: me,
                    },
                };
                let mut msg = self.new_message(core);
                self.sign_as_originator(&mut msg);
                self.seen
                    .insert(SeenKey::Rerr(me, self.rerr_id), now + self.config.cache_expiry);
                effects.sends.push(Outbound::Unicast(back, msg));
            }
        }
        for dst in rediscover {
            self.restart_discovery(dst, now, &mut effects);
        }
        effects
    }

    fn restart_discovery(&mut self, dst: Digest, now: Tick, effects: &mut Effects) {
        effects.events.push(RouteEvent::RouteBroken { dst });
        if matches!(self.pending.get(&dst), Some(p) if !p.completed) {
            return;
        }
        self.pending.remove(&dst);
        if let Ok(e) = self.originate_discovery(dst, now) {
            effects.sends.extend(e.sends);
            effects.timers.extend(e.timers);
            effects.events.extend(e.events);
        }
    }

    fn handle_rerr(&mut self, msg: &RouteMessage, from: NodeAddr, now: Tick) -> Result<Effects, RouteDrop> {
        let CoreBody::Rerr { originator_id, .. } = &msg.core.body else {
            unreachable!("dispatched on kind");
        };
        let key = SeenKey::Rerr(*originator_id, msg.core.bct_id);
        if *originator_id == self.id() || self.seen.contains_key(&key) {
            return Err(RouteDrop::Duplicate);
        }
        let transcript = self.authenticate(msg, from)?;
        let dest = self
            .registry
            .by_ip(msg.core.dst_ip)
            .map(|e| e.id)
            .ok_or(RouteDrop::NoRoute)?;
        if self.active_next_hop(&dest).is_none() {
            return Err(RouteDrop::NoRoute);
        }
        self.seen.insert(key, now + self.config.cache_expiry);
        self.routes.get_mut(&dest).expect("active").state = RouteState::Broken;

        let mut effects = Effects::default();
        effects.events.push(RouteEvent::RerrAccepted {
            originator: *originator_id,
            dst: dest,
        });
        if msg.core.src_id == self.id() {
            self.restart_discovery(dest, now, &mut effects);
            return Ok(effects);
        }
        let Some(back) = self.active_next_hop(&msg.core.src_id) else {
            return Ok(effects);
        };
        let fwd = self.extend(msg, &transcript);
        effects.sends.push(Outbound::Unicast(back, fwd));
        Ok(effects)
    }
}
