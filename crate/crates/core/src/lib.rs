//! Identity-based secure AODV routing and authenticated TCP handshakes for
//! mobile ad hoc networks, with a deterministic discrete-event simulator and
//! an attacker toolkit for exercising the defenses.

pub mod adversary;
pub mod aodv;
pub mod cli;
pub mod crypto;
pub mod identity;
pub mod metrics;
pub mod runtime;
pub mod scenario;
pub mod simnet;
pub mod tcp;
pub mod wire;
