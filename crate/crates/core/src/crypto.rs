//! Number-theoretic and hashing primitives.
//!
//! RSA key pairs (one for signing, one for encryption), the RSA-based
//! sequential aggregate signature with its per-signer overflow bit, textbook
//! RSA encryption for the Diffie-Hellman half keys, the Diffie-Hellman
//! computations themselves, SHA-256 as the single hash function, and
//! HMAC-SHA256 for segment tags.
//!
//! Everything here is a pure function of its inputs. Randomness is always
//! passed in as an explicit RNG so scenarios stay reproducible.

use std::fmt;

use hmac::{Hmac, Mac};
use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Smallest modulus size accepted by [`generate_node_keys`].
pub const MIN_KEY_BITS: usize = 64;
/// Default RSA modulus size for desk-scale scenarios.
pub const DEFAULT_KEY_BITS: usize = 512;
/// Default Diffie-Hellman prime size.
pub const DEFAULT_DH_BITS: usize = 256;

const PUBLIC_EXPONENT: u32 = 65_537;
const KEYGEN_ATTEMPTS: usize = 1_000;
const MILLER_RABIN_ROUNDS: usize = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid key size {0}: must be even and at least {MIN_KEY_BITS}")]
    InvalidKeySize(usize),
    #[error("prime generation failed for {bits}-bit key after {attempts} attempts")]
    PrimeGeneration { bits: usize, attempts: usize },
    #[error("message is not below the encryption modulus")]
    MessageOutOfRange,
    #[error("protocol violation: {0}")]
    ProtocolViolation(&'static str),
    #[error("malformed input: {0}")]
    Malformed(String),
}

/// 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const LEN: usize = 32;

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// The digest read as an unsigned big-endian integer.
    pub fn as_integer(&self) -> BigUint {
        BigUint::from_bytes_be(&self.0)
    }

    /// Builds a digest whose integer value is `value`. Used for small
    /// hand-checked vectors; panics if `value` does not fit in 256 bits.
    pub fn from_integer(value: &BigUint) -> Self {
        let bytes = value.to_bytes_be();
        assert!(bytes.len() <= Self::LEN, "value wider than 256 bits");
        let mut out = [0u8; 32];
        out[Self::LEN - bytes.len()..].copy_from_slice(&bytes);
        Digest(out)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let raw = hex::decode(s).map_err(|e| CryptoError::Malformed(e.to_string()))?;
        let arr: [u8; 32] = raw
            .try_into()
            .map_err(|_| CryptoError::Malformed("digest must be 32 bytes".into()))?;
        Ok(Digest(arr))
    }

    /// First four bytes in hex, for logs and tables.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Appends `value` as a 4-byte big-endian length followed by its minimal
/// big-endian bytes. Zero encodes as an empty byte string.
pub fn encode_biguint(value: &BigUint, out: &mut Vec<u8>) {
    let bytes = if value.is_zero() {
        Vec::new()
    } else {
        value.to_bytes_be()
    };
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(&bytes);
}

/// RSA public pair `(N, e)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PublicKey {
    pub n: BigUint,
    pub e: BigUint,
}

impl PublicKey {
    pub fn new(n: impl Into<BigUint>, e: impl Into<BigUint>) -> Self {
        PublicKey {
            n: n.into(),
            e: e.into(),
        }
    }

    /// Canonical bytes: length-prefixed `N` then length-prefixed `e`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        encode_biguint(&self.n, &mut out);
        encode_biguint(&self.e, &mut out);
        out
    }

    fn apply(&self, value: &BigUint) -> BigUint {
        value.modpow(&self.e, &self.n)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SigningKeyPair {
    pub n: BigUint,
    pub e: BigUint,
    pub d: BigUint,
}

impl SigningKeyPair {
    pub fn new(n: impl Into<BigUint>, e: impl Into<BigUint>, d: impl Into<BigUint>) -> Self {
        SigningKeyPair {
            n: n.into(),
            e: e.into(),
            d: d.into(),
        }
    }

    pub fn public(&self) -> PublicKey {
        PublicKey {
            n: self.n.clone(),
            e: self.e.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptionKeyPair {
    pub public: PublicKey,
    /// Private exponent; the modulus lives in `public`.
    pub d: BigUint,
}

/// Generates the node's signing pair and its independent encryption pair.
///
/// All randomness is drawn from a ChaCha20 stream seeded with `seed`, so the
/// same `(seed, key_bits)` always yields the same keys.
pub fn generate_node_keys(
    seed: u64,
    key_bits: usize,
) -> Result<(SigningKeyPair, EncryptionKeyPair), CryptoError> {
    if key_bits < MIN_KEY_BITS || !key_bits.is_multiple_of(2) {
        return Err(CryptoError::InvalidKeySize(key_bits));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (n, e, d) = generate_rsa(&mut rng, key_bits)?;
    let signing = SigningKeyPair { n, e, d };
    let (n, e, d) = loop {
        let candidate = generate_rsa(&mut rng, key_bits)?;
        if candidate.0 != signing.n {
            break candidate;
        }
    };
    let encryption = EncryptionKeyPair {
        public: PublicKey { n, e },
        d,
    };
    Ok((signing, encryption))
}

fn generate_rsa<R: Rng>(
    rng: &mut R,
    key_bits: usize,
) -> Result<(BigUint, BigUint, BigUint), CryptoError> {
    let half = key_bits / 2;
    let e = BigUint::from(PUBLIC_EXPONENT);
    for _ in 0..KEYGEN_ATTEMPTS {
        let p = random_prime(rng, half);
        let q = random_prime(rng, half);
        if p == q {
            continue;
        }
        let n = &p * &q;
        if n.bits() as usize != key_bits {
            continue;
        }
        let phi = (&p - 1u32) * (&q - 1u32);
        if !e.gcd(&phi).is_one() {
            continue;
        }
        let d = match mod_inverse(&e, &phi) {
            Some(d) => d,
            None => continue,
        };
        return Ok((n, e, d));
    }
    Err(CryptoError::PrimeGeneration {
        bits: key_bits,
        attempts: KEYGEN_ATTEMPTS,
    })
}

/// Modular inverse by the extended Euclidean algorithm.
pub fn mod_inverse(a: &BigUint, modulus: &BigUint) -> Option<BigUint> {
    use num_bigint::BigInt;
    let m = BigInt::from(modulus.clone());
    let egcd = BigInt::from(a.clone()).extended_gcd(&m);
    if !egcd.gcd.is_one() {
        return None;
    }
    egcd.x.mod_floor(&m).to_biguint()
}

const SMALL_PRIMES: [u32; 53] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211, 223, 227, 229, 233, 239, 241, 251,
];

fn has_small_factor(n: &BigUint) -> bool {
    SMALL_PRIMES.iter().any(|&p| {
        let p = BigUint::from(p);
        n != &p && (n % &p).is_zero()
    })
}

/// Miller-Rabin with random bases drawn from `rng`.
pub fn is_probable_prime<R: Rng>(n: &BigUint, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    if n == &two || n == &BigUint::from(3u32) {
        return true;
    }
    if n.is_even() || has_small_factor(n) {
        return false;
    }
    let n_minus_one = n - 1u32;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn random_odd_with_top_bits<R: Rng>(rng: &mut R, bits: usize) -> BigUint {
    let mut candidate = rng.gen_biguint(bits as u64);
    candidate.set_bit(bits as u64 - 1, true);
    if bits >= 2 {
        candidate.set_bit(bits as u64 - 2, true);
    }
    candidate.set_bit(0, true);
    candidate
}

/// A random prime of exactly `bits` bits with the top two bits set, so the
/// product of two such primes has exactly `2 * bits` bits.
pub fn random_prime<R: Rng>(rng: &mut R, bits: usize) -> BigUint {
    loop {
        let candidate = random_odd_with_top_bits(rng, bits);
        if is_probable_prime(&candidate, rng) {
            return candidate;
        }
    }
}

/// A random safe prime `p = 2q + 1` of exactly `bits` bits.
pub fn random_safe_prime<R: Rng>(rng: &mut R, bits: usize) -> BigUint {
    assert!(bits >= 8, "safe prime width too small");
    loop {
        let q = random_odd_with_top_bits(rng, bits - 1);
        let p: BigUint = (&q << 1) + 1u32;
        // sieve both before paying for Miller-Rabin
        if has_small_factor(&q) || has_small_factor(&p) {
            continue;
        }
        if is_probable_prime(&q, rng) && is_probable_prime(&p, rng) {
            return p;
        }
    }
}

/// Sequential aggregate signature state: the running value, one overflow bit
/// per signer after the first, and the number of signers folded in.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct AggregateSignature {
    pub value: BigUint,
    pub overflow_bits: Vec<bool>,
    pub signer_count: usize,
}

/// First signature of a chain: `(h mod N)^d mod N`.
pub fn rsa_sign_first(h: &Digest, key: &SigningKeyPair) -> AggregateSignature {
    let m = h.as_integer() % &key.n;
    AggregateSignature {
        value: m.modpow(&key.d, &key.n),
        overflow_bits: Vec::new(),
        signer_count: 1,
    }
}

/// Folds one more signer into the aggregate.
///
/// If the incoming value is not below this signer's modulus it is reduced by
/// one `N` and the overflow bit is set, so the unwinding side can add it back.
pub fn sas_aggregate_step(
    prev: &AggregateSignature,
    h: &Digest,
    key: &SigningKeyPair,
) -> AggregateSignature {
    let (carried, bit) = if prev.value >= key.n {
        (&prev.value - &key.n, true)
    } else {
        (prev.value.clone(), false)
    };
    let m = (carried + h.as_integer() % &key.n) % &key.n;
    let mut overflow_bits = prev.overflow_bits.clone();
    if prev.signer_count > 0 {
        overflow_bits.push(bit);
    }
    AggregateSignature {
        value: m.modpow(&key.d, &key.n),
        overflow_bits,
        signer_count: prev.signer_count + 1,
    }
}

/// Recovers the previous aggregate value from one signer's contribution:
/// `(σ^e − h mod N) + b·N`. `None` if `σ` is out of range for this key.
pub fn sas_unwind_step(
    sigma: &BigUint,
    overflow: bool,
    h: &Digest,
    key: &PublicKey,
) -> Option<BigUint> {
    if sigma >= &key.n {
        return None;
    }
    let lifted = key.apply(sigma);
    let h = h.as_integer() % &key.n;
    let mut prev = (lifted + &key.n - h) % &key.n;
    if overflow {
        prev += &key.n;
    }
    Some(prev)
}

/// Plain RSA verification of a single signature `σ^e mod N == h mod N`.
pub fn rsa_verify(sigma: &BigUint, h: &Digest, key: &PublicKey) -> bool {
    sigma < &key.n && key.apply(sigma) == h.as_integer() % &key.n
}

/// Verifies an aggregate by unwinding it from the last signer to the first.
///
/// `signers` is ordered first-signer-first and pairs each signer's signed
/// digest with its public key. Returns `Err` only for a shape mismatch
/// between the aggregate and the signer list.
pub fn sas_unwind_verify(
    agg: &AggregateSignature,
    signers: &[(Digest, PublicKey)],
) -> Result<bool, CryptoError> {
    sas_unwind_to_first(agg, signers).map(|first| first.is_some())
}

/// Like [`sas_unwind_verify`], but on success returns the recovered first
/// signer's standalone signature.
pub fn sas_unwind_to_first(
    agg: &AggregateSignature,
    signers: &[(Digest, PublicKey)],
) -> Result<Option<BigUint>, CryptoError> {
    if signers.is_empty() || agg.signer_count != signers.len() {
        return Err(CryptoError::Malformed(format!(
            "aggregate has {} signers, {} supplied",
            agg.signer_count,
            signers.len()
        )));
    }
    if agg.overflow_bits.len() != signers.len() - 1 {
        return Err(CryptoError::Malformed(format!(
            "{} overflow bits for {} signers",
            agg.overflow_bits.len(),
            signers.len()
        )));
    }
    let mut sigma = agg.value.clone();
    for i in (1..signers.len()).rev() {
        let (h, key) = &signers[i];
        match sas_unwind_step(&sigma, agg.overflow_bits[i - 1], h, key) {
            Some(prev) => sigma = prev,
            None => return Ok(None),
        }
    }
    let (h, key) = &signers[0];
    Ok(rsa_verify(&sigma, h, key).then_some(sigma))
}

pub fn rsa_encrypt(m: &BigUint, pk: &PublicKey) -> Result<BigUint, CryptoError> {
    if m >= &pk.n {
        return Err(CryptoError::MessageOutOfRange);
    }
    Ok(pk.apply(m))
}

pub fn rsa_decrypt(c: &BigUint, sk: &EncryptionKeyPair) -> Result<BigUint, CryptoError> {
    if c >= &sk.public.n {
        return Err(CryptoError::MessageOutOfRange);
    }
    Ok(c.modpow(&sk.d, &sk.public.n))
}

/// One party's Diffie-Hellman parameters: public `(p, g)` and the private
/// exponent `r`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DhParams {
    pub p: BigUint,
    pub g: BigUint,
    pub r: BigUint,
}

impl DhParams {
    pub fn new(p: impl Into<BigUint>, g: impl Into<BigUint>, r: impl Into<BigUint>) -> Self {
        DhParams {
            p: p.into(),
            g: g.into(),
            r: r.into(),
        }
    }

    /// Fresh safe prime, generator and exponent.
    pub fn generate<R: Rng>(rng: &mut R, bits: usize) -> Self {
        let p = random_safe_prime(rng, bits);
        let g = rng.gen_biguint_range(&BigUint::from(2u32), &(&p - 1u32));
        let r = random_exponent(rng, &p);
        DhParams { p, g, r }
    }

    /// Same public parameters, fresh private exponent (the answering side).
    pub fn with_fresh_exponent<R: Rng>(p: &BigUint, g: &BigUint, rng: &mut R) -> Self {
        DhParams {
            p: p.clone(),
            g: g.clone(),
            r: random_exponent(rng, p),
        }
    }
}

/// Uniform exponent in `[1, p − 1)`.
pub fn random_exponent<R: Rng>(rng: &mut R, p: &BigUint) -> BigUint {
    rng.gen_biguint_range(&BigUint::one(), &(p - 1u32))
}

pub fn dh_public(params: &DhParams) -> BigUint {
    params.g.modpow(&params.r, &params.p)
}

pub fn dh_shared(peer_public: &BigUint, params: &DhParams) -> Result<SessionKey, CryptoError> {
    if peer_public.is_zero() || peer_public >= &params.p {
        return Err(CryptoError::ProtocolViolation(
            "peer half key outside (0, p)",
        ));
    }
    Ok(SessionKey::from_value(
        peer_public.modpow(&params.r, &params.p),
    ))
}

/// Shared Diffie-Hellman secret and the bytes used to key the MAC.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey {
    pub value: BigUint,
    pub key_bytes: Vec<u8>,
}

impl SessionKey {
    pub fn from_value(value: BigUint) -> Self {
        let key_bytes = if value.is_zero() {
            Vec::new()
        } else {
            value.to_bytes_be()
        };
        SessionKey { value, key_bytes }
    }
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionKey({}..)", hex::encode(&self.key_bytes[..self.key_bytes.len().min(4)]))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MacTag(pub [u8; 32]);

impl fmt::Debug for MacTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacTag({})", hex::encode(&self.0[..4]))
    }
}

pub fn mac_tag(message: &[u8], key: &SessionKey) -> MacTag {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&key.key_bytes)
        .expect("HMAC accepts keys of any length");
    mac.update(message);
    MacTag(mac.finalize().into_bytes().into())
}

/// Constant-time comparison of a received tag against a freshly computed one.
pub fn mac_verify(message: &[u8], key: &SessionKey, tag: &MacTag) -> bool {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&key.key_bytes)
        .expect("HMAC accepts keys of any length");
    mac.update(message);
    mac.verify_slice(&tag.0).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::HashSet;

    // Independent oracles over machine integers.

    fn ext_euclid_inverse(a: i128, m: i128) -> Option<i128> {
        let (mut old_r, mut r) = (a, m);
        let (mut old_s, mut s) = (1i128, 0i128);
        while r != 0 {
            let q = old_r / r;
            (old_r, r) = (r, old_r - q * r);
            (old_s, s) = (s, old_s - q * s);
        }
        (old_r == 1).then(|| old_s.rem_euclid(m))
    }

    fn square_multiply(mut base: u128, mut exp: u128, m: u128) -> u128 {
        let mut acc = 1u128 % m;
        base %= m;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc * base % m;
            }
            base = base * base % m;
            exp >>= 1;
        }
        acc
    }

    fn toy_187() -> SigningKeyPair {
        SigningKeyPair::new(187u32, 7u32, 23u32)
    }

    fn toy_143() -> SigningKeyPair {
        SigningKeyPair::new(143u32, 7u32, 103u32)
    }

    fn d(v: u32) -> Digest {
        Digest::from_integer(&BigUint::from(v))
    }

    #[test]
    fn toy_private_exponent_matches_euclid_oracle() {
        assert_eq!(ext_euclid_inverse(7, 160), Some(23));
        assert_eq!(
            mod_inverse(&BigUint::from(7u32), &BigUint::from(160u32)),
            Some(BigUint::from(23u32))
        );
        assert_eq!(ext_euclid_inverse(7, 120), Some(103));
    }

    #[test]
    fn keygen_is_deterministic_and_valid() {
        let (s1, e1) = generate_node_keys(7, 512).unwrap();
        let (s2, e2) = generate_node_keys(7, 512).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(e1, e2);
        assert_ne!(s1.n, e1.public.n);
        assert_eq!(s1.n.bits(), 512);
        assert_eq!(e1.public.n.bits(), 512);
        let m = BigUint::from(123_456_789u64);
        assert_eq!(m.modpow(&s1.d, &s1.n).modpow(&s1.e, &s1.n), m);
    }

    #[test]
    fn keygen_rejects_bad_sizes() {
        assert_eq!(
            generate_node_keys(7, 63).unwrap_err(),
            CryptoError::InvalidKeySize(63)
        );
        assert!(generate_node_keys(7, 32).is_err());
        assert!(generate_node_keys(7, 64).is_ok());
    }

    #[test]
    fn empty_input_digest_golden() {
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn hash_collision_scan() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let mut seen = HashSet::new();
        let mut inputs = HashSet::new();
        for _ in 0..100_000 {
            let len = rng.gen_range(0..24);
            let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            if inputs.insert(data.clone()) {
                assert!(seen.insert(hash(&data)), "collision on {data:?}");
            }
        }
    }

    #[test]
    fn sign_first_toy_golden() {
        assert_eq!(square_multiply(88, 23, 187), 11);
        assert_eq!(square_multiply(11, 7, 187), 88);
        let sig = rsa_sign_first(&d(88), &toy_187());
        assert_eq!(sig.value, BigUint::from(11u32));
        assert_eq!(sig.signer_count, 1);
        assert!(sig.overflow_bits.is_empty());
        assert_eq!(rsa_sign_first(&d(0), &toy_187()).value, BigUint::zero());
        assert_eq!(rsa_sign_first(&d(1), &toy_187()).value, BigUint::one());
    }

    #[test]
    fn aggregate_step_toy_golden() {
        assert_eq!(square_multiply(111, 103, 143), 45);
        assert_eq!(square_multiply(45, 7, 143), 111);
        let first = rsa_sign_first(&d(88), &toy_187());
        let second = sas_aggregate_step(&first, &d(100), &toy_143());
        assert_eq!(second.value, BigUint::from(45u32));
        assert_eq!(second.overflow_bits, vec![false]);
        assert_eq!(second.signer_count, 2);
    }

    #[test]
    fn aggregate_step_sets_overflow_bit() {
        let prev = AggregateSignature {
            value: BigUint::from(150u32),
            overflow_bits: vec![],
            signer_count: 1,
        };
        let next = sas_aggregate_step(&prev, &d(0), &toy_143());
        assert_eq!(next.overflow_bits, vec![true]);
        // reduced carry is 7, and 7^103 mod 143 is what must come out
        assert_eq!(
            next.value,
            BigUint::from(square_multiply(7, 103, 143) as u64)
        );

        let zero = AggregateSignature {
            value: BigUint::zero(),
            overflow_bits: vec![],
            signer_count: 1,
        };
        let next = sas_aggregate_step(&zero, &d(0), &toy_143());
        assert_eq!(next.value, BigUint::zero());
        assert_eq!(next.overflow_bits, vec![false]);
    }

    #[test]
    fn unwind_toy_chains() {
        let agg = AggregateSignature {
            value: BigUint::from(45u32),
            overflow_bits: vec![false],
            signer_count: 2,
        };
        let keys = [toy_187().public(), toy_143().public()];
        let ok = [(d(88), keys[0].clone()), (d(100), keys[1].clone())];
        assert!(sas_unwind_verify(&agg, &ok).unwrap());
        let bad = [(d(88), keys[0].clone()), (d(101), keys[1].clone())];
        assert!(!sas_unwind_verify(&agg, &bad).unwrap());

        let single = AggregateSignature {
            value: BigUint::from(11u32),
            overflow_bits: vec![],
            signer_count: 1,
        };
        assert!(sas_unwind_verify(&single, &[(d(88), keys[0].clone())]).unwrap());
        assert!(sas_unwind_verify(&single, &ok).is_err());
    }

    #[test]
    fn overflow_bit_is_required_toy() {
        // N1 = 187 > N2 = 143; pick the first digest whose first signature
        // lands in [143, 187).
        let (h1, sigma1) = (2u32..187)
            .map(|h| (h, square_multiply(h as u128, 23, 187)))
            .find(|&(_, s)| s >= 143)
            .unwrap();
        let first = rsa_sign_first(&d(h1), &toy_187());
        assert_eq!(first.value, BigUint::from(sigma1 as u64));
        let agg = sas_aggregate_step(&first, &d(17), &toy_143());
        assert_eq!(agg.overflow_bits, vec![true]);
        let signers = [(d(h1), toy_187().public()), (d(17), toy_143().public())];
        assert!(sas_unwind_verify(&agg, &signers).unwrap());
        let mut dropped = agg.clone();
        dropped.overflow_bits = vec![false];
        assert!(!sas_unwind_verify(&dropped, &signers).unwrap());
    }

    #[test]
    fn encryption_toy_and_edges() {
        let pk = PublicKey::new(187u32, 7u32);
        let sk = EncryptionKeyPair {
            public: pk.clone(),
            d: BigUint::from(23u32),
        };
        let c = rsa_encrypt(&BigUint::from(88u32), &pk).unwrap();
        assert_eq!(c, BigUint::from(11u32));
        assert_eq!(rsa_decrypt(&c, &sk).unwrap(), BigUint::from(88u32));
        assert_eq!(rsa_encrypt(&BigUint::zero(), &pk).unwrap(), BigUint::zero());
        assert_eq!(
            rsa_encrypt(&BigUint::from(187u32), &pk),
            Err(CryptoError::MessageOutOfRange)
        );
    }

    #[test]
    fn encryption_roundtrip_generated_pair() {
        let (_, enc) = generate_node_keys(11, 512).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..100 {
            let m = rng.gen_biguint_below(&enc.public.n);
            let c = rsa_encrypt(&m, &enc.public).unwrap();
            assert_eq!(rsa_decrypt(&c, &enc).unwrap(), m);
        }
    }

    #[test]
    fn dh_toy_vectors() {
        assert_eq!(square_multiply(5, 6, 23), 8);
        assert_eq!(square_multiply(5, 15, 23), 19);
        let a = DhParams::new(23u32, 5u32, 6u32);
        let b = DhParams::new(23u32, 5u32, 15u32);
        assert_eq!(dh_public(&a), BigUint::from(8u32));
        assert_eq!(dh_public(&b), BigUint::from(19u32));
        let ka = dh_shared(&dh_public(&b), &a).unwrap();
        let kb = dh_shared(&dh_public(&a), &b).unwrap();
        assert_eq!(ka.value, BigUint::from(2u32));
        assert_eq!(ka, kb);
        assert_eq!(ka.key_bytes, vec![2u8]);
        assert_eq!(dh_shared(&BigUint::one(), &a).unwrap().value, BigUint::one());
        assert!(matches!(
            dh_shared(&BigUint::zero(), &a),
            Err(CryptoError::ProtocolViolation(_))
        ));
        assert!(dh_shared(&BigUint::from(23u32), &a).is_err());
    }

    #[test]
    fn safe_prime_generation() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let params = DhParams::generate(&mut rng, 64);
        assert_eq!(params.p.bits(), 64);
        let q = (&params.p - 1u32) >> 1;
        assert!(is_probable_prime(&q, &mut rng));
        assert!(params.g > BigUint::one() && params.g < params.p);
        assert!(params.r >= BigUint::one() && params.r < &params.p - 1u32);
    }

    #[test]
    fn mac_fuzz_bit_flips_and_keys() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let len = rng.gen_range(1..64);
            let msg: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let key = SessionKey::from_value(rng.gen_biguint(128) + 1u32);
            let tag = mac_tag(&msg, &key);
            assert_eq!(tag, mac_tag(&msg, &key));
            let mut flipped = msg.clone();
            let bit = rng.gen_range(0..len * 8);
            flipped[bit / 8] ^= 1 << (bit % 8);
            assert_ne!(tag, mac_tag(&flipped, &key));
            let other = SessionKey::from_value(&key.value + 1u32);
            assert_ne!(tag, mac_tag(&msg, &other));
            assert!(mac_verify(&msg, &key, &tag));
            assert!(!mac_verify(&flipped, &key, &tag));
        }
    }

    fn key_pool(n: usize) -> Vec<SigningKeyPair> {
        (0..n)
            .map(|i| generate_node_keys(1000 + i as u64, 128).unwrap().0)
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn aggregate_roundtrip(len in 1usize..=8, seed in any::<u64>()) {
            let keys = key_pool(8);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let hashes: Vec<Digest> = (0..len).map(|_| Digest(rng.gen())).collect();
            let mut agg = rsa_sign_first(&hashes[0], &keys[0]);
            for i in 1..len {
                agg = sas_aggregate_step(&agg, &hashes[i], &keys[i]);
            }
            prop_assert_eq!(agg.overflow_bits.len(), len - 1);
            let signers: Vec<_> = hashes.iter().zip(&keys).map(|(h, k)| (*h, k.public())).collect();
            prop_assert!(sas_unwind_verify(&agg, &signers).unwrap());
        }

        #[test]
        fn dh_agreement(seed in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let a = DhParams::generate(&mut rng, 32);
            let b = DhParams::with_fresh_exponent(&a.p, &a.g, &mut rng);
            prop_assert_eq!(dh_shared(&dh_public(&b), &a).unwrap(), dh_shared(&dh_public(&a), &b).unwrap());
        }
    }

    #[test]
    fn single_signer_aggregate_equals_plain_rsa() {
        let key = generate_node_keys(4, 256).unwrap().0;
        let h = hash(b"route request");
        let via_step = sas_aggregate_step(&AggregateSignature::default(), &h, &key);
        assert_eq!(via_step, rsa_sign_first(&h, &key));
    }
}
