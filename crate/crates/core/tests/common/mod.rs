//! Shared helpers and independent oracles for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use num_bigint::BigUint;

use manet_sec::crypto::{AggregateSignature, Digest, PublicKey};
use manet_sec::metrics::Metrics;
use manet_sec::runtime::World;
use manet_sec::scenario::Scenario;

/// Square-and-multiply over u128, sharing no code with the crate.
pub fn oracle_modpow_u64(base: u64, exp: u64, modulus: u64) -> u64 {
    let m = modulus as u128;
    let mut result = 1u128 % m;
    let mut b = base as u128 % m;
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            result = result * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    result as u64
}

fn digest_int(d: &Digest) -> BigUint {
    BigUint::from_bytes_be(&d.0)
}

/// Unwinds an aggregate from the last signer back to the first using only
/// `BigUint::modpow`.
pub fn oracle_unwind(agg: &AggregateSignature, signers: &[(Digest, PublicKey)]) -> bool {
    let n = signers.len();
    if n == 0 || agg.signer_count != n || agg.overflow_bits.len() + 1 != n {
        return false;
    }
    let mut sigma = agg.value.clone();
    for i in (1..n).rev() {
        let (h, pk) = &signers[i];
        if sigma >= pk.n {
            return false;
        }
        let lifted = sigma.modpow(&pk.e, &pk.n);
        let h = digest_int(h) % &pk.n;
        sigma = (lifted + &pk.n - h) % &pk.n;
        if agg.overflow_bits[i - 1] {
            sigma += &pk.n;
        }
    }
    let (h, pk) = &signers[0];
    sigma < pk.n && sigma.modpow(&pk.e, &pk.n) == digest_int(h) % &pk.n
}

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn scenario_path(name: &str) -> PathBuf {
    scenario_dir().join(format!("{name}.json"))
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Names of every shipped scenario, sorted.
pub fn shipped_scenarios() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .expect("scenario dir")
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(String::from))?
        })
        .collect();
    names.sort();
    names
}

pub fn run(sc: &Scenario) -> (World, Metrics) {
    let mut w = World::build(sc).expect("build");
    w.run().expect("run");
    let m = Metrics::collect(&w);
    (w, m)
}
