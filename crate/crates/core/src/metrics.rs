//! Run metrics, computed from the trace and the stations after a run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adversary::{oracle_outcome, AttackKind, Evidence, Verdict};
use crate::runtime::World;
use crate::scenario::Mode;
use crate::simnet::{TraceRecord, TUNNEL_LABEL};
use crate::wire::is_control_label;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureOps {
    pub signs: u64,
    pub verifies: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackVerdict {
    pub kind: AttackKind,
    pub attackers: Vec<u32>,
    pub targets: Vec<u32>,
    pub verdict: Verdict,
    pub evidence: Evidence,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub seed: u64,
    pub mode: Mode,
    pub sec_level: u8,
    /// Bytes of RREQ, RREP and RERR transmissions, one count per receiver.
    pub control_bytes: u64,
    pub control_messages: u64,
    pub data_bytes: u64,
    pub discovery_latency_ticks: Vec<u64>,
    pub signature_ops: SignatureOps,
    pub drops: BTreeMap<String, u64>,
    pub attack_verdicts: Vec<AttackVerdict>,
    pub peak_half_open: u64,
    /// Routes installed at discovery sources, one per completed discovery.
    pub routes_installed: u64,
    /// Route table writes at every honest node.
    pub route_entries_installed: u64,
    /// Whether every completed discovery left both endpoints with the same
    /// key. Null when no keys were agreed.
    pub endpoint_keys_equal: Option<bool>,
    pub discovery_failures: u64,
    pub rerrs_accepted: u64,
    /// Counted at each endpoint, so one connection adds two.
    pub handshakes_completed: u64,
    pub flows_started: u64,
    pub flows_completed: u64,
    pub flows_failed: u64,
    pub payload_delivered_bytes: u64,
    pub trace_records: u64,
}

/// (control bytes, control messages, data bytes) from a trace. Tunnel
/// traffic is out of band and counts as neither.
pub fn byte_totals(trace: &[TraceRecord]) -> (u64, u64, u64) {
    let mut out = (0, 0, 0);
    for r in trace {
        if r.kind == TUNNEL_LABEL {
            continue;
        }
        if is_control_label(&r.kind) {
            out.0 += r.bytes as u64;
            out.1 += 1;
        } else {
            out.2 += r.bytes as u64;
        }
    }
    out
}

impl Metrics {
    pub fn collect(world: &World) -> Metrics {
        let sc = world.scenario();
        let (control_bytes, control_messages, data_bytes) = byte_totals(world.trace());
        let obs = world.observations();

        let mut signature_ops = SignatureOps::default();
        let mut drops: BTreeMap<String, u64> = obs.station_drops.clone();
        let mut peak_half_open = 0;
        let mut handshakes_completed = 0;
        for h in world.stations().values().filter_map(|s| s.honest()) {
            let c = h.aodv().counters();
            signature_ops.signs += c.signs;
            signature_ops.verifies += c.verifies;
            let t = h.tcp().counters();
            for (k, v) in c.drops.iter().chain(t.drops.iter()) {
                *drops.entry(k.to_string()).or_default() += v;
            }
            peak_half_open = peak_half_open.max(t.peak_half_open as u64);
            handshakes_completed += t.handshakes_completed;
        }

        let endpoint_keys_equal = (!obs.source_keys.is_empty()).then(|| {
            obs.source_keys
                .iter()
                .all(|(k, v)| obs.dest_keys.get(k) == Some(v))
        });
        let discovery_latency_ticks = obs.discoveries.iter().map(|d| d.latency).collect();
        let routes_installed = obs.discoveries.len() as u64;
        let (route_entries_installed, discovery_failures, rerrs_accepted) =
            (obs.route_entries_installed, obs.discovery_failures, obs.rerrs_accepted);
        let (flows_started, flows_completed, flows_failed, payload_delivered_bytes) = (
            obs.flows_started,
            obs.flows_completed,
            obs.flows_failed,
            obs.payload_delivered_bytes,
        );
        drop(obs);

        let attack_verdicts = world
            .attacks()
            .iter()
            .map(|spec| {
                let evidence = world.evidence(spec);
                AttackVerdict {
                    kind: spec.kind,
                    attackers: spec.attackers.clone(),
                    targets: spec.targets.clone(),
                    verdict: oracle_outcome(spec.kind, &evidence),
                    evidence,
                }
            })
            .collect();

        Metrics {
            seed: sc.seed,
            mode: sc.mode,
            sec_level: if sc.secure() { sc.sec_level } else { 0 },
            control_bytes,
            control_messages,
            data_bytes,
            discovery_latency_ticks,
            signature_ops,
            drops,
            attack_verdicts,
            peak_half_open,
            routes_installed,
            route_entries_installed,
            endpoint_keys_equal,
            discovery_failures,
            rerrs_accepted,
            handshakes_completed,
            flows_started,
            flows_completed,
            flows_failed,
            payload_delivered_bytes,
            trace_records: world.trace().len() as u64,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// True if a secure-mode run let any attack reach its goal.
    pub fn secure_breach(&self) -> bool {
        self.mode == Mode::Secure
            && self
                .attack_verdicts
                .iter()
                .any(|v| v.verdict == Verdict::Succeeded)
    }

    /// Plain-text summary for terminals.
    pub fn render_table(&self) -> String {
        let mode = match self.mode {
            Mode::Secure => format!("secure (sec_level {})", self.sec_level),
            Mode::Baseline => "baseline".to_string(),
        };
        let keys = match self.endpoint_keys_equal {
            Some(true) => "equal",
            Some(false) => "MISMATCH",
            None => "-",
        };
        let rows: Vec<(&str, String)> = vec![
            ("mode", mode),
            ("seed", self.seed.to_string()),
            ("control bytes", format!("{} in {} messages", self.control_bytes, self.control_messages)),
            ("data bytes", self.data_bytes.to_string()),
            ("discoveries", format!("{} ok, {} failed", self.routes_installed, self.discovery_failures)),
            ("latency (ticks)", format!("{:?}", self.discovery_latency_ticks)),
            ("signs / verifies", format!("{} / {}", self.signature_ops.signs, self.signature_ops.verifies)),
            ("endpoint keys", keys.to_string()),
            ("handshakes", self.handshakes_completed.to_string()),
            ("flows", format!("{} started, {} completed, {} failed", self.flows_started, self.flows_completed, self.flows_failed)),
            ("payload delivered", self.payload_delivered_bytes.to_string()),
            ("rerrs accepted", self.rerrs_accepted.to_string()),
            ("peak half-open", self.peak_half_open.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<20} {v}");
        }
        if !self.drops.is_empty() {
            let _ = writeln!(out, "drops:");
            for (k, v) in &self.drops {
                let _ = writeln!(out, "  {k:<18} {v}");
            }
        }
        for a in &self.attack_verdicts {
            let _ = writeln!(out, "attack {:<14} {}", a.kind.label(), a.verdict.label());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::NodeAddr;
    use crate::simnet::Disposition;

    fn rec(kind: &str, bytes: usize) -> TraceRecord {
        TraceRecord {
            tick: 0,
            from: NodeAddr(0),
            to: NodeAddr(1),
            kind: kind.into(),
            bytes,
            disposition: Disposition::Delivered,
        }
    }

    #[test]
    fn totals_split_control_and_data() {
        let t = vec![rec("RREQ", 100), rec("RREP", 50), rec("SYN", 90), rec("TUNNEL", 400), rec("RERR", 7)];
        assert_eq!(byte_totals(&t), (157, 3, 90));
        assert_eq!(byte_totals(&[]), (0, 0, 0));
    }
}
