//! Pre-distributed identity directory.
//!
//! A node's identifier is the hash of its signing public key. Every node
//! carries the full directory (identifier, signing key, encryption key,
//! address) from before deployment, so routing messages never carry keys.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, CryptoError, Digest, EncryptionKeyPair, PublicKey, SigningKeyPair};

/// Opaque network address token assigned by the simulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeAddr(pub u32);

impl fmt::Display for NodeAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown identity {0}")]
    UnknownIdentity(Digest),
    #[error("identity {0} already registered")]
    DuplicateId(Digest),
    #[error("address {0} already registered")]
    DuplicateAddr(NodeAddr),
    #[error("identity {0} does not re-derive from its signing key")]
    IdMismatch(Digest),
    #[error("malformed registry file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn derive_id(signing_public: &PublicKey) -> Digest {
    hash(&signing_public.canonical_bytes())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeIdentity {
    pub id: Digest,
    pub signing_public: PublicKey,
    pub encryption_public: PublicKey,
    pub ip: NodeAddr,
}

impl NodeIdentity {
    pub fn new(signing_public: PublicKey, encryption_public: PublicKey, ip: NodeAddr) -> Self {
        NodeIdentity {
            id: derive_id(&signing_public),
            signing_public,
            encryption_public,
            ip,
        }
    }
}

/// A node's own key material alongside its public identity.
#[derive(Clone, Debug)]
pub struct NodeKeys {
    pub signing: SigningKeyPair,
    pub encryption: EncryptionKeyPair,
    pub identity: NodeIdentity,
}

impl NodeKeys {
    pub fn new(signing: SigningKeyPair, encryption: EncryptionKeyPair, ip: NodeAddr) -> Self {
        let identity = NodeIdentity::new(signing.public(), encryption.public.clone(), ip);
        NodeKeys {
            signing,
            encryption,
            identity,
        }
    }

    pub fn generate(seed: u64, key_bits: usize, ip: NodeAddr) -> Result<Self, CryptoError> {
        let (signing, encryption) = crate::crypto::generate_node_keys(seed, key_bits)?;
        Ok(Self::new(signing, encryption, ip))
    }

    pub fn id(&self) -> Digest {
        self.identity.id
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Registry {
    entries: BTreeMap<Digest, NodeIdentity>,
    ip_index: BTreeMap<NodeAddr, Digest>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry. Entries are never replaced once inserted.
    pub fn insert(&mut self, identity: NodeIdentity) -> Result<(), RegistryError> {
        if derive_id(&identity.signing_public) != identity.id {
            return Err(RegistryError::IdMismatch(identity.id));
        }
        if self.entries.contains_key(&identity.id) {
            return Err(RegistryError::DuplicateId(identity.id));
        }
        if self.ip_index.contains_key(&identity.ip) {
            return Err(RegistryError::DuplicateAddr(identity.ip));
        }
        self.ip_index.insert(identity.ip, identity.id);
        self.entries.insert(identity.id, identity);
        Ok(())
    }

    pub fn get(&self, id: &Digest) -> Result<&NodeIdentity, RegistryError> {
        self.entries
            .get(id)
            .ok_or(RegistryError::UnknownIdentity(*id))
    }

    pub fn by_ip(&self, ip: NodeAddr) -> Option<&NodeIdentity> {
        self.ip_index.get(&ip).and_then(|id| self.entries.get(id))
    }

    pub fn contains(&self, id: &Digest) -> bool {
        self.entries.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NodeIdentity> {
        self.entries.values()
    }

    /// True iff `presented` hashes to `claimed` and is exactly the key the
    /// directory holds for `claimed`.
    pub fn authenticate_claim(
        &self,
        claimed: &Digest,
        presented: &PublicKey,
    ) -> Result<bool, RegistryError> {
        let entry = self.get(claimed)?;
        Ok(derive_id(presented) == *claimed && entry.signing_public == *presented)
    }

    pub fn to_json(&self) -> String {
        let file = RegistryFile {
            entries: self.entries.values().map(EntryRecord::from).collect(),
        };
        serde_json::to_string_pretty(&file).expect("registry serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile =
            serde_json::from_str(text).map_err(|e| RegistryError::Malformed(e.to_string()))?;
        let mut registry = Registry::new();
        for record in file.entries {
            registry.insert(record.into_identity()?)?;
        }
        Ok(registry)
    }

    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    entries: Vec<EntryRecord>,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    id_hex: String,
    #[serde(rename = "N_hex")]
    n_hex: String,
    e_hex: String,
    #[serde(rename = "PK_N_hex")]
    pk_n_hex: String,
    #[serde(rename = "PK_e_hex")]
    pk_e_hex: String,
    ip: NodeAddr,
}

fn big_to_hex(v: &BigUint) -> String {
    v.to_str_radix(16)
}

fn hex_to_big(s: &str) -> Result<BigUint, RegistryError> {
    BigUint::parse_bytes(s.as_bytes(), 16)
        .ok_or_else(|| RegistryError::Malformed(format!("bad hex integer {s:?}")))
}

impl From<&NodeIdentity> for EntryRecord {
    fn from(n: &NodeIdentity) -> Self {
        EntryRecord {
            id_hex: n.id.to_hex(),
            n_hex: big_to_hex(&n.signing_public.n),
            e_hex: big_to_hex(&n.signing_public.e),
            pk_n_hex: big_to_hex(&n.encryption_public.n),
            pk_e_hex: big_to_hex(&n.encryption_public.e),
            ip: n.ip,
        }
    }
}

impl EntryRecord {
    fn into_identity(self) -> Result<NodeIdentity, RegistryError> {
        let id = Digest::from_hex(&self.id_hex)
            .map_err(|e| RegistryError::Malformed(e.to_string()))?;
        let signing_public = PublicKey::new(hex_to_big(&self.n_hex)?, hex_to_big(&self.e_hex)?);
        let encryption_public =
            PublicKey::new(hex_to_big(&self.pk_n_hex)?, hex_to_big(&self.pk_e_hex)?);
        if derive_id(&signing_public) != id {
            return Err(RegistryError::IdMismatch(id));
        }
        Ok(NodeIdentity {
            id,
            signing_public,
            encryption_public,
            ip: self.ip,
        })
    }
}
