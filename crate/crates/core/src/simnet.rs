//! Deterministic discrete-event network.
//!
//! Nodes are joined by undirected links with a latency in ticks and a
//! Bernoulli loss probability. Mobility is modelled only as timed link up
//! and down events. Events run in `(tick, insertion order)` order, and every
//! random choice comes from one seeded stream, so a run is a pure function
//! of its scenario and seed.
//!
//! Every transmission leaves one [`TraceRecord`] per intended receiver.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use crate::identity::NodeAddr;
use crate::wire::label_of;

pub type Tick = u64;

/// Trace label for traffic on an out-of-band tunnel.
pub const TUNNEL_LABEL: &str = "TUNNEL";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at tick {at} but clock is at {now}")]
    PastEvent { at: Tick, now: Tick },
    #[error("unknown node {0}")]
    UnknownNode(NodeAddr),
    #[error("invalid link {0}-{1}: {2}")]
    InvalidLink(NodeAddr, NodeAddr, &'static str),
}

/// Returned by [`Ctx::unicast`] when the link to the peer is down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkDown(pub NodeAddr);

#[derive(Clone, Debug, PartialEq)]
pub struct LinkProps {
    pub latency: Tick,
    pub loss: f64,
    pub up: bool,
}

impl Default for LinkProps {
    fn default() -> Self {
        LinkProps {
            latency: 1,
            loss: 0.0,
            up: true,
        }
    }
}

fn link_key(a: NodeAddr, b: NodeAddr) -> (NodeAddr, NodeAddr) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Topology {
    nodes: BTreeSet<NodeAddr>,
    links: BTreeMap<(NodeAddr, NodeAddr), LinkProps>,
    tunnels: BTreeSet<(NodeAddr, NodeAddr)>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    /// A line `0 - 1 - ... - (n-1)` with default links.
    pub fn line(n: u32) -> Self {
        let mut t = Topology::new();
        for i in 0..n {
            t.add_node(NodeAddr(i));
        }
        for i in 1..n {
            t.add_link(NodeAddr(i - 1), NodeAddr(i), LinkProps::default())
                .expect("line links are valid");
        }
        t
    }

    pub fn add_node(&mut self, addr: NodeAddr) {
        self.nodes.insert(addr);
    }

    pub fn add_link(&mut self, a: NodeAddr, b: NodeAddr, props: LinkProps) -> Result<(), SimError> {
        if a == b {
            return Err(SimError::InvalidLink(a, b, "self link"));
        }
        if !self.nodes.contains(&a) {
            return Err(SimError::UnknownNode(a));
        }
        if !self.nodes.contains(&b) {
            return Err(SimError::UnknownNode(b));
        }
        if props.latency < 1 {
            return Err(SimError::InvalidLink(a, b, "latency must be at least one tick"));
        }
        if !(0.0..=1.0).contains(&props.loss) {
            return Err(SimError::InvalidLink(a, b, "loss outside [0, 1]"));
        }
        self.links.insert(link_key(a, b), props);
        Ok(())
    }

    /// Declares a private zero-latency channel between two colluding nodes.
    pub fn add_tunnel(&mut self, a: NodeAddr, b: NodeAddr) -> Result<(), SimError> {
        if a == b {
            return Err(SimError::InvalidLink(a, b, "self tunnel"));
        }
        for n in [a, b] {
            if !self.nodes.contains(&n) {
                return Err(SimError::UnknownNode(n));
            }
        }
        self.tunnels.insert(link_key(a, b));
        Ok(())
    }

    pub fn has_tunnel(&self, a: NodeAddr, b: NodeAddr) -> bool {
        self.tunnels.contains(&link_key(a, b))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeAddr> + '_ {
        self.nodes.iter().copied()
    }

    pub fn contains(&self, addr: NodeAddr) -> bool {
        self.nodes.contains(&addr)
    }

    pub fn link(&self, a: NodeAddr, b: NodeAddr) -> Option<&LinkProps> {
        self.links.get(&link_key(a, b))
    }

    pub fn links(&self) -> impl Iterator<Item = (NodeAddr, NodeAddr, &LinkProps)> {
        self.links.iter().map(|(&(a, b), p)| (a, b, p))
    }

    pub fn is_up(&self, a: NodeAddr, b: NodeAddr) -> bool {
        self.link(a, b).is_some_and(|l| l.up)
    }

    fn set_state(&mut self, a: NodeAddr, b: NodeAddr, up: bool) -> bool {
        match self.links.get_mut(&link_key(a, b)) {
            Some(l) => {
                let changed = l.up != up;
                l.up = up;
                changed
            }
            None => false,
        }
    }

    /// Live neighbours in address order.
    pub fn neighbors(&self, a: NodeAddr) -> Vec<NodeAddr> {
        self.links
            .iter()
            .filter(|(_, p)| p.up)
            .filter_map(|(&(x, y), _)| {
                if x == a {
                    Some(y)
                } else if y == a {
                    Some(x)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Fewest live-link hops between two nodes, ignoring tunnels.
    pub fn hop_distance(&self, from: NodeAddr, to: NodeAddr) -> Option<usize> {
        let mut dist = BTreeMap::from([(from, 0usize)]);
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            if n == to {
                return dist.get(&n).copied();
            }
            let d = dist[&n];
            for m in self.neighbors(n) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(m) {
                    e.insert(d + 1);
                    queue.push_back(m);
                }
            }
        }
        None
    }

    pub fn is_connected(&self) -> bool {
        let Some(&first) = self.nodes.iter().next() else {
            return true;
        };
        self.nodes
            .iter()
            .all(|&n| self.hop_distance(first, n).is_some())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Disposition {
    Delivered,
    Lost,
    Dropped(String),
}

impl fmt::Display for Disposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Disposition::Delivered => f.write_str("delivered"),
            Disposition::Lost => f.write_str("lost"),
            Disposition::Dropped(reason) => write!(f, "dropped:{reason}"),
        }
    }
}

impl Disposition {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "delivered" => Some(Disposition::Delivered),
            "lost" => Some(Disposition::Lost),
            _ => s
                .strip_prefix("dropped:")
                .map(|r| Disposition::Dropped(r.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    /// Send tick.
    pub tick: Tick,
    pub from: NodeAddr,
    pub to: NodeAddr,
    pub kind: String,
    pub bytes: usize,
    pub disposition: Disposition,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.tick, self.from, self.to, self.kind, self.bytes, self.disposition
        )
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let mut f = line.split('\t');
        let rec = TraceRecord {
            tick: f.next()?.parse().ok()?,
            from: NodeAddr(f.next()?.parse().ok()?),
            to: NodeAddr(f.next()?.parse().ok()?),
            kind: f.next()?.to_string(),
            bytes: f.next()?.parse().ok()?,
            disposition: Disposition::parse(f.next()?)?,
        };
        f.next().is_none().then_some(rec)
    }
}

pub fn render_trace(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Node logic driven by the event loop.
pub trait Host {
    type Timer;
    type Action;

    /// A packet arrived from `from`. `tainted` is simulator-side provenance:
    /// true when an attacker forged or altered this packet or anything it
    /// was derived from. Hosts never see it on the wire.
    fn on_receive(
        &mut self,
        ctx: &mut Ctx<'_, Self::Timer, Self::Action>,
        from: NodeAddr,
        bytes: &[u8],
        tainted: bool,
    ) -> Disposition;

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Self::Timer, Self::Action>, timer: Self::Timer);

    fn on_action(&mut self, ctx: &mut Ctx<'_, Self::Timer, Self::Action>, action: Self::Action);
}

enum EventKind<T, A> {
    Deliver {
        from: NodeAddr,
        to: NodeAddr,
        bytes: Vec<u8>,
        tainted: bool,
        record: usize,
        via_tunnel: bool,
    },
    Link {
        a: NodeAddr,
        b: NodeAddr,
        up: bool,
    },
    Action(NodeAddr, A),
    Timer(NodeAddr, T),
}

struct Scheduled<T, A> {
    at: Tick,
    seq: u64,
    kind: EventKind<T, A>,
}

impl<T, A> PartialEq for Scheduled<T, A> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl<T, A> Eq for Scheduled<T, A> {}
impl<T, A> PartialOrd for Scheduled<T, A> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<T, A> Ord for Scheduled<T, A> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Topology, clock, pending events and the trace.
pub struct Network<T, A> {
    topology: Topology,
    now: Tick,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled<T, A>>>,
    trace: Vec<TraceRecord>,
    pending: BTreeSet<usize>,
    rng: ChaCha8Rng,
}

impl<T, A> Network<T, A> {
    pub fn new(topology: Topology, seed: u64) -> Self {
        Network {
            topology,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            trace: Vec::new(),
            pending: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_11e7),
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    fn push(&mut self, at: Tick, kind: EventKind<T, A>) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::PastEvent { at, now: self.now });
        }
        self.seq += 1;
        self.queue.push(Reverse(Scheduled {
            at,
            seq: self.seq,
            kind,
        }));
        Ok(())
    }

    pub fn schedule_action(&mut self, at: Tick, node: NodeAddr, action: A) -> Result<(), SimError> {
        if !self.topology.contains(node) {
            return Err(SimError::UnknownNode(node));
        }
        self.push(at, EventKind::Action(node, action))
    }

    pub fn schedule_timer(&mut self, at: Tick, node: NodeAddr, timer: T) -> Result<(), SimError> {
        self.push(at, EventKind::Timer(node, timer))
    }

    pub fn schedule_link_change(
        &mut self,
        at: Tick,
        a: NodeAddr,
        b: NodeAddr,
        up: bool,
    ) -> Result<(), SimError> {
        if self.topology.link(a, b).is_none() {
            return Err(SimError::InvalidLink(a, b, "no such link"));
        }
        self.push(at, EventKind::Link { a, b, up })
    }

    fn record(&mut self, from: NodeAddr, to: NodeAddr, kind: &str, bytes: usize) -> usize {
        self.trace.push(TraceRecord {
            tick: self.now,
            from,
            to,
            kind: kind.to_string(),
            bytes,
            disposition: Disposition::Lost,
        });
        let idx = self.trace.len() - 1;
        self.pending.insert(idx);
        idx
    }

    fn resolve(&mut self, record: usize, disposition: Disposition) {
        self.trace[record].disposition = disposition;
        self.pending.remove(&record);
    }

    fn send_over_link(&mut self, from: NodeAddr, to: NodeAddr, bytes: Vec<u8>, tainted: bool) {
        let props = self
            .topology
            .link(from, to)
            .cloned()
            .expect("caller checked the link");
        let record = self.record(from, to, label_of(&bytes), bytes.len());
        if props.loss > 0.0 && self.rng.gen::<f64>() < props.loss {
            self.resolve(record, Disposition::Lost);
            return;
        }
        let at = self.now + props.latency;
        self.push(
            at,
            EventKind::Deliver {
                from,
                to,
                bytes,
                tainted,
                record,
                via_tunnel: false,
            },
        )
        .expect("future tick");
    }
}

/// Handle given to a host while it runs.
pub struct Ctx<'a, T, A> {
    net: &'a mut Network<T, A>,
    me: NodeAddr,
}

impl<T, A> Ctx<'_, T, A> {
    pub fn now(&self) -> Tick {
        self.net.now
    }

    pub fn me(&self) -> NodeAddr {
        self.me
    }

    pub fn topology(&self) -> &Topology {
        &self.net.topology
    }

    /// Sends to every live neighbour; returns the fan-out.
    pub fn broadcast(&mut self, bytes: Vec<u8>, tainted: bool) -> usize {
        let neighbors = self.net.topology.neighbors(self.me);
        for &n in &neighbors {
            self.net.send_over_link(self.me, n, bytes.clone(), tainted);
        }
        neighbors.len()
    }

    /// Sends to one neighbour. A dead link is reported to the caller at
    /// once and leaves a `lost` trace record.
    pub fn unicast(&mut self, to: NodeAddr, bytes: Vec<u8>, tainted: bool) -> Result<(), LinkDown> {
        if !self.net.topology.is_up(self.me, to) {
            if self.net.topology.link(self.me, to).is_some() {
                let rec = self
                    .net
                    .record(self.me, to, label_of(&bytes), bytes.len());
                self.net.resolve(rec, Disposition::Lost);
            }
            return Err(LinkDown(to));
        }
        self.net.send_over_link(self.me, to, bytes, tainted);
        Ok(())
    }

    /// Sends over a declared out-of-band tunnel. Delivered in the same tick
    /// and labelled so it never counts as routing traffic.
    pub fn tunnel(&mut self, to: NodeAddr, bytes: Vec<u8>, tainted: bool) -> Result<(), LinkDown> {
        if !self.net.topology.has_tunnel(self.me, to) {
            return Err(LinkDown(to));
        }
        let record = self.net.record(self.me, to, TUNNEL_LABEL, bytes.len());
        let at = self.net.now;
        self.net
            .push(
                at,
                EventKind::Deliver {
                    from: self.me,
                    to,
                    bytes,
                    tainted,
                    record,
                    via_tunnel: true,
                },
            )
            .expect("current tick");
        Ok(())
    }

    pub fn set_timer(&mut self, at: Tick, timer: T) -> Result<(), SimError> {
        let me = self.me;
        self.net.schedule_timer(at, me, timer)
    }
}

pub struct Simulator<H: Host> {
    net: Network<H::Timer, H::Action>,
    hosts: BTreeMap<NodeAddr, H>,
}

impl<H: Host> Simulator<H> {
    pub fn new(topology: Topology, seed: u64) -> Self {
        Simulator {
            net: Network::new(topology, seed),
            hosts: BTreeMap::new(),
        }
    }

    pub fn add_host(&mut self, addr: NodeAddr, host: H) -> Result<(), SimError> {
        if !self.net.topology.contains(addr) {
            return Err(SimError::UnknownNode(addr));
        }
        self.hosts.insert(addr, host);
        Ok(())
    }

    pub fn network(&self) -> &Network<H::Timer, H::Action> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<H::Timer, H::Action> {
        &mut self.net
    }

    pub fn hosts(&self) -> &BTreeMap<NodeAddr, H> {
        &self.hosts
    }

    pub fn host_mut(&mut self, addr: NodeAddr) -> Option<&mut H> {
        self.hosts.get_mut(&addr)
    }

    /// Runs every event at or before `until`.
    pub fn run(&mut self, until: Tick) -> Result<(), SimError> {
        while let Some(Reverse(peek)) = self.net.queue.peek() {
            if peek.at > until {
                break;
            }
            let Reverse(ev) = self.net.queue.pop().expect("peeked");
            if ev.at < self.net.now {
                return Err(SimError::PastEvent {
                    at: ev.at,
                    now: self.net.now,
                });
            }
            self.net.now = ev.at;
            self.dispatch(ev.kind);
        }
        self.net.now = self.net.now.max(until);
        Ok(())
    }

    fn dispatch(&mut self, kind: EventKind<H::Timer, H::Action>) {
        match kind {
            EventKind::Deliver {
                from,
                to,
                bytes,
                tainted,
                record,
                via_tunnel,
            } => {
                let live = via_tunnel || self.net.topology.is_up(from, to);
                let disposition = match (live, self.hosts.get_mut(&to)) {
                    (true, Some(host)) => {
                        let mut ctx = Ctx {
                            net: &mut self.net,
                            me: to,
                        };
                        host.on_receive(&mut ctx, from, &bytes, tainted)
                    }
                    _ => Disposition::Lost,
                };
                self.net.resolve(record, disposition);
            }
            EventKind::Link { a, b, up } => {
                self.net.topology.set_state(a, b, up);
            }
            EventKind::Action(node, action) => {
                if let Some(host) = self.hosts.get_mut(&node) {
                    let mut ctx = Ctx {
                        net: &mut self.net,
                        me: node,
                    };
                    host.on_action(&mut ctx, action);
                }
            }
            EventKind::Timer(node, timer) => {
                if let Some(host) = self.hosts.get_mut(&node) {
                    let mut ctx = Ctx {
                        net: &mut self.net,
                        me: node,
                    };
                    host.on_timer(&mut ctx, timer);
                }
            }
        }
    }

    /// Trace so far. Transmissions still in flight show as `lost`.
    pub fn trace(&self) -> &[TraceRecord] {
        &self.net.trace
    }

    pub fn in_flight(&self) -> usize {
        self.net.pending.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Floods every new payload once, like a toy RREQ.
    #[derive(Default)]
    struct Flooder {
        seen: BTreeSet<Vec<u8>>,
        received: Vec<(Tick, NodeAddr)>,
        link_failures: Vec<NodeAddr>,
    }

    enum Act {
        Flood(Vec<u8>),
        Send(NodeAddr, Vec<u8>),
    }

    impl Host for Flooder {
        type Timer = ();
        type Action = Act;

        fn on_receive(&mut self, ctx: &mut Ctx<'_, (), Act>, from: NodeAddr, bytes: &[u8], _: bool) -> Disposition {
            self.received.push((ctx.now(), from));
            if self.seen.insert(bytes.to_vec()) {
                ctx.broadcast(bytes.to_vec(), false);
                Disposition::Delivered
            } else {
                Disposition::Dropped("duplicate".into())
            }
        }

        fn on_timer(&mut self, _: &mut Ctx<'_, (), Act>, _: ()) {}

        fn on_action(&mut self, ctx: &mut Ctx<'_, (), Act>, action: Act) {
            match action {
                Act::Flood(b) => {
                    self.seen.insert(b.clone());
                    ctx.broadcast(b, false);
                }
                Act::Send(to, b) => {
                    if let Err(LinkDown(n)) = ctx.unicast(to, b, false) {
                        self.link_failures.push(n);
                    }
                }
            }
        }
    }

    fn sim(topology: Topology, seed: u64) -> Simulator<Flooder> {
        let nodes: Vec<_> = topology.nodes().collect();
        let mut s = Simulator::new(topology, seed);
        for n in nodes {
            s.add_host(n, Flooder::default()).unwrap();
        }
        s
    }

    #[test]
    fn line_flood_matches_hand_count() {
        // Origin 0 broadcasts once (fan-out 1); nodes 1..3 each rebroadcast
        // to 2 neighbours; node 4 rebroadcasts to 1.  1 + 2*3 + 1 = 8.
        let mut s = sim(Topology::line(5), 1);
        s.network_mut()
            .schedule_action(1, NodeAddr(0), Act::Flood(vec![1, 2, 3]))
            .unwrap();
        s.run(100).unwrap();
        assert_eq!(s.trace().len(), 8);
        let delivered = s
            .trace()
            .iter()
            .filter(|r| r.disposition == Disposition::Delivered)
            .count();
        assert_eq!(delivered, 4);
        assert_eq!(s.hosts()[&NodeAddr(4)].received, vec![(5, NodeAddr(3))]);
    }

    #[test]
    fn broadcast_fans_out_to_live_neighbours() {
        let mut t = Topology::new();
        for i in 0..4 {
            t.add_node(NodeAddr(i));
        }
        for i in 1..4 {
            t.add_link(NodeAddr(0), NodeAddr(i), LinkProps::default()).unwrap();
        }
        let mut s = sim(t, 1);
        s.network_mut()
            .schedule_action(0, NodeAddr(0), Act::Flood(vec![9]))
            .unwrap();
        s.run(1).unwrap();
        let from_hub = s.trace().iter().filter(|r| r.from == NodeAddr(0)).count();
        assert_eq!(from_hub, 3);
    }

    #[test]
    fn unicast_over_downed_link_notifies_sender() {
        let mut s = sim(Topology::line(2), 1);
        let net = s.network_mut();
        net.schedule_link_change(1, NodeAddr(0), NodeAddr(1), false).unwrap();
        net.schedule_action(2, NodeAddr(0), Act::Send(NodeAddr(1), vec![7]))
            .unwrap();
        net.schedule_link_change(3, NodeAddr(0), NodeAddr(1), true).unwrap();
        net.schedule_action(4, NodeAddr(0), Act::Send(NodeAddr(1), vec![8]))
            .unwrap();
        s.run(10).unwrap();
        assert_eq!(s.hosts()[&NodeAddr(0)].link_failures, vec![NodeAddr(1)]);
        // Node 1 floods the new payload back; node 0 echoes it once more.
        assert_eq!(
            s.hosts()[&NodeAddr(1)].received,
            vec![(5, NodeAddr(0)), (7, NodeAddr(0))]
        );
        assert_eq!(s.trace()[0].disposition, Disposition::Lost);
        assert_eq!(s.trace()[1].disposition, Disposition::Delivered);
    }

    #[test]
    fn in_flight_delivery_lost_when_link_drops() {
        let mut t = Topology::new();
        t.add_node(NodeAddr(0));
        t.add_node(NodeAddr(1));
        t.add_link(NodeAddr(0), NodeAddr(1), LinkProps { latency: 5, ..Default::default() })
            .unwrap();
        let mut s = sim(t, 1);
        let net = s.network_mut();
        net.schedule_action(0, NodeAddr(0), Act::Send(NodeAddr(1), vec![1]))
            .unwrap();
        net.schedule_link_change(2, NodeAddr(0), NodeAddr(1), false).unwrap();
        s.run(10).unwrap();
        assert_eq!(s.trace()[0].disposition, Disposition::Lost);
        assert!(s.hosts()[&NodeAddr(1)].received.is_empty());
    }

    #[test]
    fn runs_are_deterministic_under_loss() {
        let mut t = Topology::new();
        for i in 0..6 {
            t.add_node(NodeAddr(i));
        }
        for i in 0..6u32 {
            for j in (i + 1)..6 {
                t.add_link(NodeAddr(i), NodeAddr(j), LinkProps { latency: 1 + (i + j) as u64 % 3, loss: 0.3, up: true })
                    .unwrap();
            }
        }
        let run = |seed| {
            let mut s = sim(t.clone(), seed);
            for k in 0..5u8 {
                s.network_mut()
                    .schedule_action(k as u64, NodeAddr(k as u32), Act::Flood(vec![k]))
                    .unwrap();
            }
            s.run(50).unwrap();
            render_trace(s.trace())
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn empty_scenario_has_empty_trace() {
        let mut s = sim(Topology::line(3), 1);
        s.run(100).unwrap();
        assert!(s.trace().is_empty());
    }

    #[test]
    fn past_events_and_bad_links_rejected() {
        let mut s = sim(Topology::line(2), 1);
        s.run(10).unwrap();
        assert!(matches!(
            s.network_mut().schedule_action(5, NodeAddr(0), Act::Flood(vec![])),
            Err(SimError::PastEvent { at: 5, now: 10 })
        ));
        let mut t = Topology::line(2);
        assert!(t.add_link(NodeAddr(0), NodeAddr(0), LinkProps::default()).is_err());
        assert!(t
            .add_link(NodeAddr(0), NodeAddr(1), LinkProps { latency: 0, ..Default::default() })
            .is_err());
        assert!(t.add_link(NodeAddr(0), NodeAddr(9), LinkProps::default()).is_err());
    }

    #[test]
    fn trace_line_roundtrip() {
        let r = TraceRecord {
            tick: 4,
            from: NodeAddr(1),
            to: NodeAddr(2),
            kind: "RREQ".into(),
            bytes: 321,
            disposition: Disposition::Dropped("verify_failed".into()),
        };
        assert_eq!(r.to_line(), "4\t1\t2\tRREQ\t321\tdropped:verify_failed");
        assert_eq!(TraceRecord::parse_line(&r.to_line()), Some(r));
        assert_eq!(TraceRecord::parse_line("1\t2"), None);
    }

    #[test]
    fn hop_distance_on_line() {
        let t = Topology::line(5);
        assert_eq!(t.hop_distance(NodeAddr(0), NodeAddr(4)), Some(4));
        assert!(t.is_connected());
    }
}
