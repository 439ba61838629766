//! Declarative scenario files.
//!
//! A scenario fixes everything a run depends on: seed, key sizes, security
//! level, topology, timed events and attacks. Node `i` gets address `i`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::AttackSpec;
use crate::crypto::{hash, CryptoError, DEFAULT_DH_BITS, DEFAULT_KEY_BITS, MIN_KEY_BITS};
use crate::identity::{NodeAddr, NodeKeys, Registry, RegistryError};
use crate::simnet::Tick;
use crate::tcp::DEFAULT_HALF_OPEN_CAPACITY;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown node {0}")]
    UnknownNode(u32),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] crate::simnet::SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Secure,
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Nodes {
    Count(u32),
    List(Vec<u32>),
}

impl Nodes {
    pub fn addrs(&self) -> Vec<NodeAddr> {
        match self {
            Nodes::Count(n) => (0..*n).map(NodeAddr).collect(),
            Nodes::List(v) => {
                let set: BTreeSet<u32> = v.iter().copied().collect();
                set.into_iter().map(NodeAddr).collect()
            }
        }
    }
}

fn default_latency() -> Tick {
    1
}

fn default_up() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: u32,
    pub b: u32,
    #[serde(default = "default_latency")]
    pub latency: Tick,
    #[serde(default)]
    pub loss: f64,
    /// False declares a link that starts down.
    #[serde(default = "default_up")]
    pub up: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    StartDiscovery { src: u32, dst: u32 },
    StartFlow { src: u32, dst: u32, bytes: usize },
    LinkUp { a: u32, b: u32 },
    LinkDown { a: u32, b: u32 },
    Attack { spec: AttackSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub at: Tick,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Fixed Diffie-Hellman values instead of fresh random ones.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DhPin {
    pub p: u64,
    pub g: u64,
    pub initiator_r: u64,
    pub responder_r: u64,
}

impl DhPin {
    pub fn to_policy(&self) -> crate::aodv::DhPolicy {
        crate::aodv::DhPolicy::Pinned {
            p: BigUint::from(self.p),
            g: BigUint::from(self.g),
            initiator_r: BigUint::from(self.initiator_r),
            responder_r: BigUint::from(self.responder_r),
        }
    }
}

fn default_key_bits() -> usize {
    DEFAULT_KEY_BITS
}

fn default_dh_bits() -> usize {
    DEFAULT_DH_BITS
}

fn default_sec_level() -> u8 {
    1
}

fn default_mode() -> Mode {
    Mode::Secure
}

fn default_capacity() -> usize {
    DEFAULT_HALF_OPEN_CAPACITY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default = "default_key_bits")]
    pub key_bits: usize,
    #[serde(default = "default_dh_bits")]
    pub dh_bits: usize,
    #[serde(default = "default_sec_level")]
    pub sec_level: u8,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub nodes: Nodes,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub events: Vec<TimedEvent>,
    pub run_until: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dh_pin: Option<DhPin>,
    #[serde(default = "default_capacity")]
    pub half_open_capacity: usize,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn secure(&self) -> bool {
        self.mode == Mode::Secure
    }

    pub fn addrs(&self) -> Vec<NodeAddr> {
        self.nodes.addrs()
    }

    /// Nodes named as attackers by any attack event.
    pub fn attackers(&self) -> BTreeSet<NodeAddr> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Attack { spec } => Some(spec.attackers.iter().map(|&a| NodeAddr(a))),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn honest(&self) -> Vec<NodeAddr> {
        let bad = self.attackers();
        self.addrs().into_iter().filter(|a| !bad.contains(a)).collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.key_bits < MIN_KEY_BITS || !self.key_bits.is_multiple_of(2) {
            return Err(CryptoError::InvalidKeySize(self.key_bits).into());
        }
        if self.sec_level > 1 {
            return Err(ScenarioError::Invalid(format!("sec_level {} not in {{0, 1}}", self.sec_level)));
        }
        if self.dh_pin.is_none() && (self.dh_bits < 8 || self.dh_bits >= self.key_bits) {
            return Err(ScenarioError::Invalid(format!(
                "dh_bits {} must be in [8, key_bits)",
                self.dh_bits
            )));
        }
        if let Some(pin) = &self.dh_pin {
            if pin.p < 5 || pin.g < 2 || pin.g >= pin.p {
                return Err(ScenarioError::Invalid("pinned DH values out of range".into()));
            }
        }
        let nodes: BTreeSet<u32> = self.addrs().iter().map(|a| a.0).collect();
        let known = |n: u32| {
            if nodes.contains(&n) {
                Ok(())
            } else {
                Err(ScenarioError::UnknownNode(n))
            }
        };
        for l in &self.links {
            known(l.a)?;
            known(l.b)?;
            if l.a == l.b {
                return Err(ScenarioError::Invalid(format!("self link on node {}", l.a)));
            }
            if l.latency < 1 || !(0.0..=1.0).contains(&l.loss) {
                return Err(ScenarioError::Invalid(format!("bad link {}-{}", l.a, l.b)));
            }
        }
        for e in &self.events {
            if e.at > self.run_until {
                return Err(ScenarioError::Invalid(format!(
                    "event at tick {} after run_until {}",
                    e.at, self.run_until
                )));
            }
            match &e.kind {
                EventKind::StartDiscovery { src, dst } | EventKind::StartFlow { src, dst, .. } => {
                    known(*src)?;
                    known(*dst)?;
                }
                EventKind::LinkUp { a, b } | EventKind::LinkDown { a, b } => {
                    known(*a)?;
                    known(*b)?;
                    if !self.links.iter().any(|l| (l.a, l.b) == (*a, *b) || (l.b, l.a) == (*a, *b)) {
                        return Err(ScenarioError::Invalid(format!("no link {a}-{b}")));
                    }
                }
                EventKind::Attack { spec } => {
                    spec.validate().map_err(ScenarioError::Invalid)?;
                    for n in spec.attackers.iter().chain(spec.targets.iter()) {
                        known(*n)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Deterministic per-node seed.
    pub fn node_seed(&self, purpose: &str, addr: NodeAddr) -> u64 {
        derive_seed(self.seed, purpose, addr.0)
    }

    /// Key material for every node, attackers included.
    pub fn provision(&self) -> Result<Vec<NodeKeys>, ScenarioError> {
        self.addrs()
            .into_iter()
            .map(|a| NodeKeys::generate(self.node_seed("keys", a), self.key_bits, a).map_err(Into::into))
            .collect()
    }

    /// Directory of honest nodes. Attackers hold keys of their own but are
    /// not enrolled.
    pub fn registry(&self, keys: &[NodeKeys]) -> Result<Registry, ScenarioError> {
        let bad = self.attackers();
        let mut reg = Registry::new();
        for k in keys.iter().filter(|k| !bad.contains(&k.identity.ip)) {
            reg.insert(k.identity.clone())?;
        }
        Ok(reg)
    }
}

pub fn derive_seed(seed: u64, purpose: &str, index: u32) -> u64 {
    let mut input = seed.to_be_bytes().to_vec();
    input.extend_from_slice(purpose.as_bytes());
    input.extend_from_slice(&index.to_be_bytes());
    let d = hash(&input);
    u64::from_be_bytes(d.0[..8].try_into().expect("8 bytes"))
}
