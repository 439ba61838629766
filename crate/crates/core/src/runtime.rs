//! Glue between the protocol state machines and the simulator.
//!
//! An honest station runs one routing node and one transport endpoint. An
//! attacker station runs one [`Attacker`]. Everything an attacker transmits
//! is tainted, and anything an honest station emits while handling a
//! tainted packet stays tainted; the observations gathered here feed the
//! verdict oracle.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;
use std::sync::Arc;

use num_bigint::BigUint;

use crate::adversary::{AttackKind, AttackOut, AttackSpec, Attacker, Evidence, Overheard, SniffLog};
use crate::aodv::{AodvNode, AodvTimer, DhPolicy, Effects, NodeConfig, Outbound, RouteEvent};
use crate::crypto::Digest;
use crate::identity::{NodeAddr, NodeKeys, Registry};
use crate::scenario::{EventKind, Scenario, ScenarioError};
use crate::simnet::{Ctx, Disposition, Host, LinkProps, Simulator, Tick, Topology, TraceRecord};
use crate::tcp::{TcpConfig, TcpEffects, TcpEndpoint, TcpEvent, TcpTimer, LISTEN_PORT};
use crate::wire::{DataPacket, Packet, Segment, SignatureMode};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Timer {
    Aodv(AodvTimer),
    Tcp(TcpTimer),
    Attack,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    StartDiscovery(NodeAddr),
    StartFlow(NodeAddr, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscoveryRecord {
    pub src: Digest,
    pub dst: Digest,
    pub bct_id: u64,
    pub completed_at: Tick,
    pub latency: Tick,
}

/// Run-wide observations. Only the simulator harness writes here; nodes
/// never read it back.
#[derive(Debug, Default)]
pub struct Observations {
    pub discoveries: Vec<DiscoveryRecord>,
    pub discovery_failures: u64,
    /// Session key values keyed by (source, destination, broadcast id).
    pub source_keys: BTreeMap<(Digest, Digest, u64), BigUint>,
    pub dest_keys: BTreeMap<(Digest, Digest, u64), BigUint>,
    pub route_entries_installed: u64,
    pub rerrs_accepted: u64,
    pub routes_broken: u64,
    pub payload_delivered_bytes: u64,
    pub flows_started: u64,
    pub flows_completed: u64,
    pub flows_failed: u64,
    pub unroutable_segments: u64,
    /// Drops decided by the station glue rather than by a protocol engine.
    pub station_drops: BTreeMap<String, u64>,
    pub evidence: Evidence,
}

pub type Shared = Rc<RefCell<Observations>>;

pub struct HonestNode {
    aodv: AodvNode,
    tcp: TcpEndpoint,
    registry: Arc<Registry>,
    obs: Shared,
    sniff: SniffLog,
    waiting: Vec<(Digest, usize)>,
}

type HCtx<'a, 'b> = &'a mut Ctx<'b, Timer, Action>;

impl HonestNode {
    pub fn new(aodv: AodvNode, tcp: TcpEndpoint, registry: Arc<Registry>, obs: Shared, sniff: SniffLog) -> Self {
        HonestNode {
            aodv,
            tcp,
            registry,
            obs,
            sniff,
            waiting: Vec::new(),
        }
    }

    pub fn aodv(&self) -> &AodvNode {
        &self.aodv
    }

    pub fn tcp(&self) -> &TcpEndpoint {
        &self.tcp
    }

    fn secure(&self) -> bool {
        self.aodv.config().secure
    }

    fn drop_local(&self, reason: &str, tainted: bool) -> Disposition {
        let mut o = self.obs.borrow_mut();
        *o.station_drops.entry(reason.to_string()).or_default() += 1;
        if tainted {
            *o.evidence.tainted_drops.entry(reason.to_string()).or_default() += 1;
        }
        Disposition::Dropped(reason.to_string())
    }

    fn drop_protocol(&self, reason: &str, tainted: bool) -> Disposition {
        if tainted {
            let mut o = self.obs.borrow_mut();
            *o.evidence.tainted_drops.entry(reason.to_string()).or_default() += 1;
        }
        Disposition::Dropped(reason.to_string())
    }

    fn apply_route(&mut self, ctx: HCtx, fx: Effects, tainted: bool) {
        let mut queue = vec![fx];
        while let Some(fx) = queue.pop() {
            for send in fx.sends {
                match send {
                    Outbound::Broadcast(m) => {
                        ctx.broadcast(m.encode(), tainted);
                    }
                    Outbound::Unicast(to, m) => {
                        if ctx.unicast(to, m.encode(), tainted).is_err() {
                            queue.push(self.aodv.link_broken(to, ctx.now()));
                        }
                    }
                }
            }
            for (at, t) in fx.timers {
                ctx.set_timer(at, Timer::Aodv(t)).expect("aodv timers are in the future");
            }
            for ev in fx.events {
                self.route_event(ctx, ev, tainted);
            }
        }
    }

    fn route_event(&mut self, ctx: HCtx, ev: RouteEvent, tainted: bool) {
        let me = self.aodv.id();
        match ev {
            RouteEvent::RouteInstalled { .. } => {
                let mut o = self.obs.borrow_mut();
                o.route_entries_installed += 1;
                if tainted {
                    o.evidence.tainted_route_installs += 1;
                }
            }
            RouteEvent::DiscoveryComplete {
                dst,
                bct_id,
                latency,
                key,
            } => {
                {
                    let mut o = self.obs.borrow_mut();
                    o.discoveries.push(DiscoveryRecord {
                        src: me,
                        dst,
                        bct_id,
                        completed_at: ctx.now(),
                        latency,
                    });
                    if let Some(k) = key {
                        o.source_keys.insert((me, dst, bct_id), k.value);
                    }
                }
                self.release_waiting(ctx, dst, tainted);
            }
            RouteEvent::DiscoveryAnswered { peer, bct_id, key } => {
                if let Some(k) = key {
                    self.obs.borrow_mut().dest_keys.insert((peer, me, bct_id), k.value);
                }
            }
            RouteEvent::DiscoveryFailed { dst } => {
                let before = self.waiting.len();
                self.waiting.retain(|(d, _)| *d != dst);
                let mut o = self.obs.borrow_mut();
                o.discovery_failures += 1;
                o.flows_failed += (before - self.waiting.len()) as u64;
            }
            RouteEvent::RerrAccepted { .. } => {
                let mut o = self.obs.borrow_mut();
                o.rerrs_accepted += 1;
                if tainted {
                    o.evidence.tainted_rerrs_accepted += 1;
                }
            }
            RouteEvent::RouteBroken { .. } => {
                self.obs.borrow_mut().routes_broken += 1;
            }
        }
    }

    fn release_waiting(&mut self, ctx: HCtx, dst: Digest, tainted: bool) {
        let (ready, rest): (Vec<_>, Vec<_>) = self.waiting.drain(..).partition(|(d, _)| *d == dst);
        self.waiting = rest;
        for (_, bytes) in ready {
            self.open_flow(ctx, dst, bytes, tainted);
        }
    }

    fn open_flow(&mut self, ctx: HCtx, dst: Digest, bytes: usize, tainted: bool) {
        let key = self.aodv.session_key(&dst).cloned();
        match self.tcp.initiate(dst, key.as_ref(), bytes, ctx.now()) {
            Ok((_, fx)) => {
                self.obs.borrow_mut().flows_started += 1;
                self.apply_tcp(ctx, fx, tainted);
            }
            Err(_) => self.obs.borrow_mut().flows_failed += 1,
        }
    }

    fn start_flow(&mut self, ctx: HCtx, dst: Digest, bytes: usize) {
        let routed = self.aodv.active_next_hop(&dst).is_some();
        if routed && (!self.secure() || self.aodv.session_key(&dst).is_some()) {
            self.open_flow(ctx, dst, bytes, false);
            return;
        }
        self.waiting.push((dst, bytes));
        if self.aodv.pending(&dst).is_some_and(|p| !p.completed) {
            return;
        }
        match self.aodv.originate_discovery(dst, ctx.now()) {
            Ok(fx) => self.apply_route(ctx, fx, false),
            Err(_) => {
                self.waiting.retain(|(d, _)| *d != dst);
                self.obs.borrow_mut().flows_failed += 1;
            }
        }
    }

    fn apply_tcp(&mut self, ctx: HCtx, fx: TcpEffects, tainted: bool) {
        for (peer, seg) in fx.sends {
            self.send_segment(ctx, peer, seg, tainted);
        }
        for (at, t) in fx.timers {
            ctx.set_timer(at, Timer::Tcp(t)).expect("tcp timers are in the future");
        }
        for ev in fx.events {
            let mut o = self.obs.borrow_mut();
            match ev {
                TcpEvent::Delivered { bytes, .. } => {
                    o.payload_delivered_bytes += bytes as u64;
                    if tainted {
                        o.evidence.tainted_payload_bytes += bytes as u64;
                    }
                }
                TcpEvent::SendComplete { .. } => o.flows_completed += 1,
                // only the initiating side owns a flow
                TcpEvent::Failed { conn } if conn.2 == LISTEN_PORT => o.flows_failed += 1,
                TcpEvent::DiscardKey { peer } => {
                    drop(o);
                    self.aodv.discard_session(&peer);
                }
                _ => {}
            }
        }
    }

    fn send_segment(&mut self, ctx: HCtx, peer: Digest, segment: Segment, tainted: bool) {
        let Ok(entry) = self.registry.get(&peer) else {
            // replies to unenrolled senders have nowhere to go
            self.obs.borrow_mut().unroutable_segments += 1;
            return;
        };
        let pkt = DataPacket {
            src_ip: self.aodv.addr(),
            src_id: self.aodv.id(),
            dst_ip: entry.ip,
            dst_id: peer,
            segment,
        };
        self.forward(ctx, pkt, tainted);
    }

    /// Sends a data packet one hop along the active route. False if there
    /// was no route.
    fn forward(&mut self, ctx: HCtx, pkt: DataPacket, tainted: bool) -> bool {
        let Some(next) = self.aodv.active_next_hop(&pkt.dst_id) else {
            self.obs.borrow_mut().unroutable_segments += 1;
            return false;
        };
        self.sniff.borrow_mut().push(Overheard {
            tick: ctx.now(),
            from: self.aodv.addr(),
            to: next,
            packet: pkt.clone(),
        });
        if ctx.unicast(next, Packet::Data(pkt).encode(), tainted).is_err() {
            let fx = self.aodv.link_broken(next, ctx.now());
            self.apply_route(ctx, fx, tainted);
        }
        true
    }

    fn receive(&mut self, ctx: HCtx, from: NodeAddr, bytes: &[u8], tainted: bool) -> Disposition {
        let Ok(pkt) = Packet::decode(bytes) else {
            return self.drop_local("malformed", tainted);
        };
        match pkt {
            Packet::Route(msg) => match self.aodv.handle(&msg, from, ctx.now()) {
                Ok(fx) => {
                    self.apply_route(ctx, fx, tainted);
                    Disposition::Delivered
                }
                Err(d) => self.drop_protocol(d.label(), tainted),
            },
            Packet::Data(p) if p.dst_id == self.aodv.id() => {
                let key = self.aodv.session_key(&p.src_id).cloned();
                match self.tcp.on_segment(p.src_id, &p.segment, key.as_ref(), ctx.now()) {
                    Ok(fx) => {
                        if tainted && !fx.sends.is_empty() {
                            self.obs.borrow_mut().evidence.responses_to_tainted_segments += 1;
                        }
                        self.apply_tcp(ctx, fx, tainted);
                        Disposition::Delivered
                    }
                    Err(d) => self.drop_protocol(d.label(), tainted),
                }
            }
            Packet::Data(p) => {
                if self.forward(ctx, p, tainted) {
                    Disposition::Delivered
                } else {
                    self.drop_local("no_route", tainted)
                }
            }
        }
    }
}

pub struct AttackerNode {
    attacker: Attacker,
    mode: SignatureMode,
    sec_level: u8,
}

impl AttackerNode {
    pub fn attacker(&self) -> &Attacker {
        &self.attacker
    }

    fn emit(&self, ctx: HCtx, outs: Vec<AttackOut>) {
        for out in outs {
            match out {
                AttackOut::Broadcast(b) => {
                    ctx.broadcast(b, true);
                }
                AttackOut::Unicast(to, b) => {
                    let _ = ctx.unicast(to, b, true);
                }
                AttackOut::Tunnel(to, b) => {
                    let _ = ctx.tunnel(to, b, true);
                }
            }
        }
    }
}

pub enum Station {
    Honest(Box<HonestNode>),
    Attacker(Box<AttackerNode>),
}

impl Station {
    pub fn honest(&self) -> Option<&HonestNode> {
        match self {
            Station::Honest(h) => Some(h),
            Station::Attacker(_) => None,
        }
    }

    pub fn attacker(&self) -> Option<&AttackerNode> {
        match self {
            Station::Attacker(a) => Some(a),
            Station::Honest(_) => None,
        }
    }
}

impl Host for Station {
    type Timer = Timer;
    type Action = Action;

    fn on_receive(&mut self, ctx: HCtx, from: NodeAddr, bytes: &[u8], tainted: bool) -> Disposition {
        match self {
            Station::Honest(h) => h.receive(ctx, from, bytes, tainted),
            Station::Attacker(a) => {
                let outs = a.attacker.on_packet(from, bytes, ctx.now());
                a.emit(ctx, outs);
                Disposition::Delivered
            }
        }
    }

    fn on_timer(&mut self, ctx: HCtx, timer: Timer) {
        match (self, timer) {
            (Station::Honest(h), Timer::Aodv(t)) => {
                let fx = h.aodv.on_timer(t, ctx.now());
                h.apply_route(ctx, fx, false);
            }
            (Station::Honest(h), Timer::Tcp(t)) => {
                let fx = h.tcp.on_timer(t, ctx.now());
                h.apply_tcp(ctx, fx, false);
            }
            (Station::Attacker(a), Timer::Attack) => {
                let (outs, next) = a.attacker.on_tick(ctx.now(), ctx.topology(), a.mode, a.sec_level);
                a.emit(ctx, outs);
                if let Some(at) = next {
                    ctx.set_timer(at, Timer::Attack).expect("next tick is in the future");
                }
            }
            _ => {}
        }
    }

    fn on_action(&mut self, ctx: HCtx, action: Action) {
        let Station::Honest(h) = self else {
            return;
        };
        let (dst, bytes) = match action {
            Action::StartDiscovery(d) => (d, None),
            Action::StartFlow(d, n) => (d, Some(n)),
        };
        let Some(dst) = h.registry.by_ip(dst).map(|e| e.id) else {
            h.obs.borrow_mut().discovery_failures += 1;
            return;
        };
        match bytes {
            Some(n) => h.start_flow(ctx, dst, n),
            None => match h.aodv.originate_discovery(dst, ctx.now()) {
                Ok(fx) => h.apply_route(ctx, fx, false),
                Err(_) => h.obs.borrow_mut().discovery_failures += 1,
            },
        }
    }
}

/// A scenario wired into a simulator, ready to run.
pub struct World {
    scenario: Scenario,
    sim: Simulator<Station>,
    obs: Shared,
    attacks: Vec<AttackSpec>,
}

impl World {
    pub fn build(scenario: &Scenario) -> Result<Self, ScenarioError> {
        let keys = scenario.provision()?;
        Self::with_keys(scenario, keys)
    }

    /// Builds with pre-generated keys, matched to nodes by address.
    pub fn with_keys(scenario: &Scenario, keys: Vec<NodeKeys>) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let mut by_addr: BTreeMap<NodeAddr, NodeKeys> = keys.into_iter().map(|k| (k.identity.ip, k)).collect();
        let registry = Arc::new(scenario.registry(&by_addr.values().cloned().collect::<Vec<_>>())?);

        let mut attacks: Vec<(Tick, AttackSpec)> = Vec::new();
        for e in &scenario.events {
            if let EventKind::Attack { spec } = &e.kind {
                let mut spec = spec.clone();
                spec.start = spec.start.max(e.at);
                attacks.push((e.at, spec));
            }
        }
        let mut roles: BTreeMap<NodeAddr, AttackSpec> = BTreeMap::new();
        for (_, spec) in &attacks {
            for &a in &spec.attackers {
                if roles.insert(NodeAddr(a), spec.clone()).is_some() {
                    return Err(ScenarioError::Invalid(format!("node {a} is attacker in two attacks")));
                }
            }
        }

        let mut topo = Topology::new();
        for a in scenario.addrs() {
            topo.add_node(a);
        }
        for l in &scenario.links {
            let props = LinkProps {
                latency: l.latency,
                loss: l.loss,
                up: l.up,
            };
            topo.add_link(NodeAddr(l.a), NodeAddr(l.b), props)
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        for (_, spec) in &attacks {
            if spec.kind == AttackKind::Tunnel {
                topo.add_tunnel(NodeAddr(spec.attackers[0]), NodeAddr(spec.attackers[1]))
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            }
        }

        let obs: Shared = Rc::default();
        let sniff: SniffLog = Rc::default();
        let mut sim = Simulator::new(topo, scenario.node_seed("loss", NodeAddr(0)));
        let dh = match &scenario.dh_pin {
            Some(pin) => pin.to_policy(),
            None => DhPolicy::Random {
                bits: scenario.dh_bits,
            },
        };
        let probe = NodeConfig::secure(scenario.sec_level, dh.clone(), 0);
        let (mode, sec_level) = if scenario.secure() {
            (probe.signature_mode(), scenario.sec_level)
        } else {
            (SignatureMode::Unsigned, 0)
        };

        for addr in scenario.addrs() {
            let keys = by_addr.remove(&addr).ok_or(ScenarioError::UnknownNode(addr.0))?;
            let station = match roles.get(&addr) {
                Some(spec) => Station::Attacker(Box::new(AttackerNode {
                    attacker: Attacker::new(
                        spec.clone(),
                        keys,
                        registry.clone(),
                        sniff.clone(),
                        scenario.node_seed("attack", addr),
                    ),
                    mode,
                    sec_level,
                })),
                None => {
                    let seed = scenario.node_seed("aodv", addr);
                    let config = if scenario.secure() {
                        NodeConfig::secure(scenario.sec_level, dh.clone(), seed)
                    } else {
                        NodeConfig::baseline(seed)
                    };
                    let aodv = AodvNode::new(keys, registry.clone(), config);
                    let mut tc = TcpConfig::new(scenario.secure(), scenario.node_seed("tcp", addr));
                    tc.half_open_capacity = scenario.half_open_capacity;
                    let tcp = TcpEndpoint::new(aodv.id(), tc);
                    Station::Honest(Box::new(HonestNode::new(aodv, tcp, registry.clone(), obs.clone(), sniff.clone())))
                }
            };
            if let Some(first) = station.attacker().and_then(|a| a.attacker.first_tick()) {
                sim.network_mut().schedule_timer(first, addr, Timer::Attack)?;
            }
            sim.add_host(addr, station)?;
        }

        for e in &scenario.events {
            let net = sim.network_mut();
            match &e.kind {
                EventKind::StartDiscovery { src, dst } => {
                    net.schedule_action(e.at, NodeAddr(*src), Action::StartDiscovery(NodeAddr(*dst)))?
                }
                EventKind::StartFlow { src, dst, bytes } => {
                    net.schedule_action(e.at, NodeAddr(*src), Action::StartFlow(NodeAddr(*dst), *bytes))?
                }
                EventKind::LinkUp { a, b } => net.schedule_link_change(e.at, NodeAddr(*a), NodeAddr(*b), true)?,
                EventKind::LinkDown { a, b } => net.schedule_link_change(e.at, NodeAddr(*a), NodeAddr(*b), false)?,
                EventKind::Attack { .. } => {}
            }
        }

        Ok(World {
            scenario: scenario.clone(),
            sim,
            obs,
            attacks: attacks.into_iter().map(|(_, s)| s).collect(),
        })
    }

    pub fn run(&mut self) -> Result<(), ScenarioError> {
        self.sim.run(self.scenario.run_until)?;
        Ok(())
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.sim.trace()
    }

    pub fn stations(&self) -> &BTreeMap<NodeAddr, Station> {
        self.sim.hosts()
    }

    pub fn honest(&self, addr: NodeAddr) -> Option<&HonestNode> {
        self.sim.hosts().get(&addr).and_then(Station::honest)
    }

    pub fn observations(&self) -> std::cell::Ref<'_, Observations> {
        self.obs.borrow()
    }

    /// Attacks with their effective start ticks.
    pub fn attacks(&self) -> &[AttackSpec] {
        &self.attacks
    }

    /// Evidence for one attack. Evidence is run-wide, so attacks sharing a
    /// run share it.
    pub fn evidence(&self, spec: &AttackSpec) -> Evidence {
        let mut ev = self.obs.borrow().evidence.clone();
        ev.half_open_capacity = self.scenario.half_open_capacity as u64;
        if spec.kind == AttackKind::SynFlood {
            let victims: BTreeSet<NodeAddr> = spec.targets.iter().map(|&t| NodeAddr(t)).collect();
            ev.victim_peak_half_open = victims
                .iter()
                .filter_map(|&v| self.honest(v))
                .map(|h| h.tcp.counters().peak_half_open as u64)
                .max()
                .unwrap_or(0);
        }
        ev
    }
}
