//! Byte-exact encodings for routing messages, TCP segments, and the data
//! envelope that carries segments across the routed path.
//!
//! Layout rules: one tag byte per packet, fixed-width big-endian integers
//! (4 bytes for addresses and counts, 8 for sequence-like fields), big
//! integers as a 4-byte length plus minimal big-endian bytes, digests and
//! MAC tags as raw 32 bytes, overflow bits packed most-significant-bit first.
//! Decoding rejects anything that would not re-encode to the same bytes.

use num_bigint::BigUint;
use thiserror::Error;

use crate::crypto::{encode_biguint, AggregateSignature, Digest, MacTag, PublicKey};
use crate::identity::NodeAddr;

pub const TAG_RREQ: u8 = 0x01;
pub const TAG_RREP: u8 = 0x02;
pub const TAG_RERR: u8 = 0x03;
pub const TAG_DATA: u8 = 0x20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at byte {position}: {reason}")]
pub struct WireError {
    pub position: usize,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RouteKind {
    Rreq,
    Rrep,
    Rerr,
}

impl RouteKind {
    pub fn label(self) -> &'static str {
        match self {
            RouteKind::Rreq => "RREQ",
            RouteKind::Rrep => "RREP",
            RouteKind::Rerr => "RERR",
        }
    }
}

/// Kind-specific immutable fields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoreBody {
    Rreq {
        dh_prime: BigUint,
        dh_generator: BigUint,
        /// `E_PK_D(g^r1 mod p)`
        encrypted_half: BigUint,
    },
    Rrep {
        dst_seq: u64,
        dst_id: Digest,
        /// `E_PK_S(g^r2 mod p)`
        encrypted_half: BigUint,
    },
    Rerr {
        dst_seq: u64,
        originator_id: Digest,
    },
}

/// The part of a routing message no forwarder may change.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteCore {
    pub src_ip: NodeAddr,
    pub src_id: Digest,
    pub src_seq: u64,
    pub bct_id: u64,
    pub dst_ip: NodeAddr,
    pub body: CoreBody,
}

impl RouteCore {
    pub fn kind(&self) -> RouteKind {
        match self.body {
            CoreBody::Rreq { .. } => RouteKind::Rreq,
            CoreBody::Rrep { .. } => RouteKind::Rrep,
            CoreBody::Rerr { .. } => RouteKind::Rerr,
        }
    }

    /// Identity of the node that created the message and signs first:
    /// the source for RREQ, the destination for RREP, the break detector
    /// for RERR.
    pub fn originator(&self) -> Digest {
        match &self.body {
            CoreBody::Rreq { .. } => self.src_id,
            CoreBody::Rrep { dst_id, .. } => *dst_id,
            CoreBody::Rerr { originator_id, .. } => *originator_id,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(160);
        self.encode_into(&mut out);
        out
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(match self.kind() {
            RouteKind::Rreq => TAG_RREQ,
            RouteKind::Rrep => TAG_RREP,
            RouteKind::Rerr => TAG_RERR,
        });
        out.extend_from_slice(&self.src_ip.0.to_be_bytes());
        out.extend_from_slice(self.src_id.as_bytes());
        out.extend_from_slice(&self.src_seq.to_be_bytes());
        out.extend_from_slice(&self.bct_id.to_be_bytes());
        out.extend_from_slice(&self.dst_ip.0.to_be_bytes());
        match &self.body {
            CoreBody::Rreq {
                dh_prime,
                dh_generator,
                encrypted_half,
            } => {
                encode_biguint(dh_prime, out);
                encode_biguint(dh_generator, out);
                encode_biguint(encrypted_half, out);
            }
            CoreBody::Rrep {
                dst_seq,
                dst_id,
                encrypted_half,
            } => {
                out.extend_from_slice(&dst_seq.to_be_bytes());
                out.extend_from_slice(dst_id.as_bytes());
                encode_biguint(encrypted_half, out);
            }
            CoreBody::Rerr {
                dst_seq,
                originator_id,
            } => {
                out.extend_from_slice(&dst_seq.to_be_bytes());
                out.extend_from_slice(originator_id.as_bytes());
            }
        }
    }
}

/// How signatures are carried.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SignatureMode {
    /// Plain AODV, used by the insecure baseline.
    Unsigned,
    /// High security: one aggregate over the originator and every hop.
    AggregateFull,
    /// Low security: at most one hop record; the aggregate binds the last
    /// hop to the originator's signature, which is recovered by one
    /// unwinding step.
    SourcePlusLast,
}

impl SignatureMode {
    fn to_byte(self) -> u8 {
        match self {
            SignatureMode::Unsigned => 0,
            SignatureMode::AggregateFull => 1,
            SignatureMode::SourcePlusLast => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(SignatureMode::Unsigned),
            1 => Some(SignatureMode::AggregateFull),
            2 => Some(SignatureMode::SourcePlusLast),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteMessage {
    pub core: RouteCore,
    /// Append-only list of forwarding node identities; its length is the
    /// hop count.
    pub hops: Vec<Digest>,
    pub signature_mode: SignatureMode,
    pub aggregate: AggregateSignature,
    pub sec_level: u8,
}

impl RouteMessage {
    pub fn kind(&self) -> RouteKind {
        self.core.kind()
    }

    /// Identity of the last signer: the newest hop, or the originator.
    pub fn last_signer(&self) -> Digest {
        self.hops.last().copied().unwrap_or_else(|| self.core.originator())
    }

    /// Signer identities in signing order.
    pub fn signer_ids(&self) -> Vec<Digest> {
        std::iter::once(self.core.originator())
            .chain(self.hops.iter().copied())
            .collect()
    }

    /// Bytes the `hop_index`-th signer saw: the core followed by the first
    /// `hop_index` hop records. Index 0 is the originator's view.
    pub fn signing_view(&self, hop_index: usize) -> Result<Vec<u8>, WireError> {
        if hop_index > self.hops.len() {
            return Err(WireError {
                position: 0,
                reason: format!(
                    "hop index {hop_index} beyond {} hop records",
                    self.hops.len()
                ),
            });
        }
        let mut out = self.core.encode();
        for id in &self.hops[..hop_index] {
            out.extend_from_slice(id.as_bytes());
        }
        Ok(out)
    }

    /// Digest signed by signer `hop_index` holding `key`:
    /// `H(view ‖ canonical(N, e))`.
    pub fn signed_digest(&self, hop_index: usize, key: &PublicKey) -> Result<Digest, WireError> {
        let mut input = self.signing_view(hop_index)?;
        input.extend_from_slice(&key.canonical_bytes());
        Ok(crate::crypto::hash(&input))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(256);
        self.core.encode_into(&mut out);
        out.push(self.sec_level);
        out.push(self.signature_mode.to_byte());
        out.extend_from_slice(&(self.hops.len() as u32).to_be_bytes());
        for id in &self.hops {
            out.extend_from_slice(id.as_bytes());
        }
        encode_biguint(&self.aggregate.value, &mut out);
        out.extend_from_slice(&(self.aggregate.signer_count as u32).to_be_bytes());
        out.extend_from_slice(&(self.aggregate.overflow_bits.len() as u32).to_be_bytes());
        out.extend_from_slice(&pack_bits(&self.aggregate.overflow_bits));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let msg = Self::read(&mut r)?;
        r.finish()?;
        Ok(msg)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let tag = r.u8()?;
        let src_ip = NodeAddr(r.u32()?);
        let src_id = r.digest()?;
        let src_seq = r.u64()?;
        let bct_id = r.u64()?;
        let dst_ip = NodeAddr(r.u32()?);
        let body = match tag {
            TAG_RREQ => CoreBody::Rreq {
                dh_prime: r.biguint()?,
                dh_generator: r.biguint()?,
                encrypted_half: r.biguint()?,
            },
            TAG_RREP => CoreBody::Rrep {
                dst_seq: r.u64()?,
                dst_id: r.digest()?,
                encrypted_half: r.biguint()?,
            },
            TAG_RERR => CoreBody::Rerr {
                dst_seq: r.u64()?,
                originator_id: r.digest()?,
            },
            other => return Err(r.error_at(0, format!("unknown routing tag {other:#04x}"))),
        };
        let sec_level = r.u8()?;
        if sec_level > 1 {
            return Err(r.error_back(1, format!("sec_level {sec_level}")));
        }
        let mode_byte = r.u8()?;
        let signature_mode = SignatureMode::from_byte(mode_byte)
            .ok_or_else(|| r.error_back(1, format!("signature mode {mode_byte}")))?;
        let hop_count = r.u32()? as usize;
        let mut hops = Vec::with_capacity(hop_count.min(64));
        for _ in 0..hop_count {
            hops.push(r.digest()?);
        }
        let value = r.biguint()?;
        let signer_count = r.u32()? as usize;
        let bit_count = r.u32()? as usize;
        let overflow_bits = r.bits(bit_count)?;
        Ok(RouteMessage {
            core: RouteCore {
                src_ip,
                src_id,
                src_seq,
                bct_id,
                dst_ip,
                body,
            },
            hops,
            signature_mode,
            aggregate: AggregateSignature {
                value,
                overflow_bits,
                signer_count,
            },
            sec_level,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SegmentRole {
    Syn,
    SynAck,
    Ack,
    Data,
    Fin,
    FinAck,
}

impl SegmentRole {
    pub fn label(self) -> &'static str {
        match self {
            SegmentRole::Syn => "SYN",
            SegmentRole::SynAck => "SYN_ACK",
            SegmentRole::Ack => "ACK",
            SegmentRole::Data => "DATA",
            SegmentRole::Fin => "FIN",
            SegmentRole::FinAck => "FIN_ACK",
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            SegmentRole::Syn => 1,
            SegmentRole::SynAck => 2,
            SegmentRole::Ack => 3,
            SegmentRole::Data => 4,
            SegmentRole::Fin => 5,
            SegmentRole::FinAck => 6,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => SegmentRole::Syn,
            2 => SegmentRole::SynAck,
            3 => SegmentRole::Ack,
            4 => SegmentRole::Data,
            5 => SegmentRole::Fin,
            6 => SegmentRole::FinAck,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub role: SegmentRole,
    pub src_port: u64,
    pub dst_port: u64,
    pub seq: u64,
    pub ack: u64,
    pub payload: Vec<u8>,
    pub tag: MacTag,
}

impl Segment {
    pub fn new(role: SegmentRole, src_port: u64, dst_port: u64, seq: u64, ack: u64) -> Self {
        Segment {
            role,
            src_port,
            dst_port,
            seq,
            ack,
            payload: Vec::new(),
            tag: MacTag::default(),
        }
    }

    /// Every field except the tag, in wire order.
    pub fn tag_input(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(37 + 4 + self.payload.len());
        out.push(self.role.to_byte());
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.ack.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.tag_input();
        out.extend_from_slice(&self.tag.0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let seg = Self::read(&mut r)?;
        r.finish()?;
        Ok(seg)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let role_byte = r.u8()?;
        let role = SegmentRole::from_byte(role_byte)
            .ok_or_else(|| r.error_back(1, format!("segment role {role_byte}")))?;
        let src_port = r.u64()?;
        let dst_port = r.u64()?;
        let seq = r.u64()?;
        let ack = r.u64()?;
        let len = r.u32()? as usize;
        let payload = r.take(len)?.to_vec();
        let tag = MacTag(r.array32()?);
        Ok(Segment {
            role,
            src_port,
            dst_port,
            seq,
            ack,
            payload,
            tag,
        })
    }
}

/// Routed envelope for a transport segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataPacket {
    pub src_ip: NodeAddr,
    pub src_id: Digest,
    pub dst_ip: NodeAddr,
    pub dst_id: Digest,
    pub segment: Segment,
}

impl DataPacket {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![TAG_DATA];
        out.extend_from_slice(&self.src_ip.0.to_be_bytes());
        out.extend_from_slice(self.src_id.as_bytes());
        out.extend_from_slice(&self.dst_ip.0.to_be_bytes());
        out.extend_from_slice(self.dst_id.as_bytes());
        out.extend_from_slice(&self.segment.encode());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let tag = r.u8()?;
        if tag != TAG_DATA {
            return Err(r.error_at(0, format!("expected data tag, got {tag:#04x}")));
        }
        let pkt = DataPacket {
            src_ip: NodeAddr(r.u32()?),
            src_id: r.digest()?,
            dst_ip: NodeAddr(r.u32()?),
            dst_id: r.digest()?,
            segment: Segment::read(&mut r)?,
        };
        r.finish()?;
        Ok(pkt)
    }
}

/// Anything that travels over a simulated link.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Packet {
    Route(RouteMessage),
    Data(DataPacket),
}

impl Packet {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Packet::Route(m) => m.encode(),
            Packet::Data(d) => d.encode(),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        match bytes.first() {
            Some(&TAG_DATA) => DataPacket::decode(bytes).map(Packet::Data),
            Some(_) => RouteMessage::decode(bytes).map(Packet::Route),
            None => Err(WireError {
                position: 0,
                reason: "empty packet".into(),
            }),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Packet::Route(m) => m.kind().label(),
            Packet::Data(d) => d.segment.role.label(),
        }
    }

    pub fn is_control(&self) -> bool {
        matches!(self, Packet::Route(_))
    }
}

/// Trace label for raw bytes without a full decode.
pub fn label_of(bytes: &[u8]) -> &'static str {
    match bytes.first() {
        Some(&TAG_RREQ) => "RREQ",
        Some(&TAG_RREP) => "RREP",
        Some(&TAG_RERR) => "RERR",
        Some(&TAG_DATA) => bytes
            .get(73)
            .and_then(|b| SegmentRole::from_byte(*b))
            .map(SegmentRole::label)
            .unwrap_or("DATA?"),
        _ => "UNKNOWN",
    }
}

pub fn is_control_label(label: &str) -> bool {
    matches!(label, "RREQ" | "RREP" | "RERR")
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &bit) in bits.iter().enumerate() {
        if bit {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn error_at(&self, position: usize, reason: String) -> WireError {
        WireError { position, reason }
    }

    fn error_back(&self, back: usize, reason: String) -> WireError {
        WireError {
            position: self.pos - back,
            reason,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(
                self.pos,
                format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array32(&mut self) -> Result<[u8; 32], WireError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    fn digest(&mut self) -> Result<Digest, WireError> {
        Ok(Digest(self.array32()?))
    }

    fn biguint(&mut self) -> Result<BigUint, WireError> {
        let start = self.pos;
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        if raw.first() == Some(&0) {
            return Err(self.error_at(start, "non-minimal integer encoding".into()));
        }
        Ok(BigUint::from_bytes_be(raw))
    }

    fn bits(&mut self, count: usize) -> Result<Vec<bool>, WireError> {
        let start = self.pos;
        let raw = self.take(count.div_ceil(8))?;
        let bits: Vec<bool> = (0..count)
            .map(|i| raw[i / 8] & (0x80 >> (i % 8)) != 0)
            .collect();
        if pack_bits(&bits) != raw {
            return Err(self.error_at(start, "nonzero padding in overflow bits".into()));
        }
        Ok(bits)
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.pos != self.bytes.len() {
            return Err(self.error_at(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}
