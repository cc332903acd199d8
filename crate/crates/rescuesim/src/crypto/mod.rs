//! Hashing, Merkle trees, and an aggregatable signature scheme.
//!
//! Two interchangeable backends sit behind [`SignatureScheme`]:
//! [`SimBls`](simbls::SimBls), a deterministic discrete-log toy group that
//! preserves the multi-signature algebra and is fast enough for large
//! simulations, and [`PairingBls`](pairing::PairingBls), a real BLS12-381
//! implementation. Both produce 96-byte public keys and 48-byte signatures
//! so every byte-accounting path is identical regardless of backend.

pub mod merkle;
pub mod pairing;
pub mod simbls;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256, Sha512};
use std::fmt;

pub const PK_LEN: usize = 96;
pub const SIG_LEN: usize = 48;

/// 32-byte digest, the output of `h0`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Digest32(pub [u8; 32]);

impl Digest32 {
    pub const ZERO: Digest32 = Digest32([0u8; 32]);

    pub fn to_hex(self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn short_hex(self) -> String {
        self.to_hex()[..12].to_string()
    }
}

impl fmt::Debug for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest32({})", self.short_hex())
    }
}

impl AsRef<[u8]> for Digest32 {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// Primary hash: arbitrary bytes to a 32-byte digest.
pub fn h0(data: &[u8]) -> Digest32 {
    let mut hasher = Sha256::new();
    hasher.update(data);
    Digest32(hasher.finalize().into())
}

/// Hash of several fields in order, without intermediate copies.
pub fn h0_parts(parts: &[&[u8]]) -> Digest32 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p);
    }
    Digest32(hasher.finalize().into())
}

/// Scalar hash used for multi-signature weights: 64 bytes of output so
/// backends can reduce into their scalar field without bias.
pub fn h1_wide(pk: &PublicKey, pk_list: &[PublicKey]) -> [u8; 64] {
    let mut hasher = Sha512::new();
    hasher.update(pk.0);
    for p in pk_list {
        hasher.update(p.0);
    }
    hasher.finalize().into()
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PublicKey(#[serde(with = "serde_bytes96")] pub [u8; PK_LEN]);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex: String = self.0[..6].iter().map(|b| format!("{b:02x}")).collect();
        write!(f, "PublicKey({hex}..)")
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey(pub [u8; 32]);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey(..)")
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature(#[serde(with = "serde_bytes48")] pub [u8; SIG_LEN]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex: String = self.0[..6].iter().map(|b| format!("{b:02x}")).collect();
        write!(f, "Signature({hex}..)")
    }
}

/// One node's signing identity. Nodes receive a batch of indexed pairs at
/// registration; index 0 is used throughout the simulation.
#[derive(Clone, Debug)]
pub struct KeyPair {
    pub owner: u64,
    pub index: u32,
    pub sk: SecretKey,
    pub pk: PublicKey,
}

/// Weighted multi-signature over one message. The combined signature has a
/// fixed byte size; the signer list is context the verifier already holds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregateSignature {
    pub sigma: Signature,
    pub signer_pks: Vec<PublicKey>,
}

impl AggregateSignature {
    /// Wire form against a known ordered key context: the combined signature
    /// plus a membership bitmap. Size depends on the context size only, never
    /// on how many actually signed.
    pub fn encode_compact(&self, context: &[PublicKey]) -> Vec<u8> {
        let mut bitmap = vec![0u8; context.len().div_ceil(8)];
        for pk in &self.signer_pks {
            if let Some(i) = context.iter().position(|c| c == pk) {
                bitmap[i / 8] |= 1 << (i % 8);
            }
        }
        let mut out = Vec::with_capacity(SIG_LEN + bitmap.len());
        out.extend_from_slice(&self.sigma.0);
        out.extend_from_slice(&bitmap);
        out
    }

    pub fn decode_compact(bytes: &[u8], context: &[PublicKey]) -> Option<Self> {
        if bytes.len() != SIG_LEN + context.len().div_ceil(8) {
            return None;
        }
        let mut sigma = [0u8; SIG_LEN];
        sigma.copy_from_slice(&bytes[..SIG_LEN]);
        let bitmap = &bytes[SIG_LEN..];
        let signer_pks = context
            .iter()
            .enumerate()
            .filter(|(i, _)| bitmap[i / 8] & (1 << (i % 8)) != 0)
            .map(|(_, pk)| *pk)
            .collect();
        Some(Self {
            sigma: Signature(sigma),
            signer_pks,
        })
    }
}

/// Contract every backend satisfies: deterministic keygen, sign/verify over
/// exact bytes, and weighted aggregation that verifies iff every constituent
/// signed the identical message.
pub trait SignatureScheme: Send + Sync {
    fn keygen(&self, owner: u64, index: u32, seed: u64) -> KeyPair;
    fn sign(&self, msg: &[u8], kp: &KeyPair) -> Signature;
    fn verify(&self, sig: &Signature, msg: &[u8], pk: &PublicKey) -> bool;
    /// Combines constituent signatures with weights `h1(pk_i, signer list)`.
    /// Returns `None` on an empty input.
    fn aggregate(&self, parts: &[(PublicKey, Signature)]) -> Option<AggregateSignature>;
    fn verify_aggregate(&self, agg: &AggregateSignature, msg: &[u8]) -> bool;
}

/// Backend selector, chosen by scenario config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CryptoBackend {
    /// Deterministic toy-group backend; default for simulation runs.
    #[default]
    Sim,
    /// BLS12-381 pairing backend.
    Pairing,
}

pub fn make_scheme(backend: CryptoBackend) -> Box<dyn SignatureScheme> {
    match backend {
        CryptoBackend::Sim => Box::new(simbls::SimBls),
        CryptoBackend::Pairing => Box::new(pairing::PairingBls),
    }
}

mod serde_bytes96 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 96], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_bytes(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 96], D::Error> {
        let v: Vec<u8> = Vec::deserialize(d)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("expected 96 bytes"))
    }
}

mod serde_bytes48 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 48], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_bytes(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 48], D::Error> {
        let v: Vec<u8> = Vec::deserialize(d)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("expected 48 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schemes() -> Vec<(&'static str, Box<dyn SignatureScheme>)> {
        vec![
            ("sim", make_scheme(CryptoBackend::Sim)),
            ("pairing", make_scheme(CryptoBackend::Pairing)),
        ]
    }

    #[test]
    fn keygen_is_deterministic_and_distinct() {
        for (name, s) in schemes() {
            let a = s.keygen(1, 0, 42);
            let b = s.keygen(1, 0, 42);
            let c = s.keygen(2, 0, 43);
            assert_eq!(a.pk, b.pk, "{name}: same seed must give same pk");
            assert_eq!(a.sk.0, b.sk.0, "{name}");
            assert_ne!(a.pk, c.pk, "{name}: distinct seeds must give distinct pk");
        }
    }

    #[test]
    fn sign_verify_round_trip() {
        for (name, s) in schemes() {
            let kp = s.keygen(1, 0, 7);
            let other = s.keygen(2, 0, 8);
            let msg = b"offload result for task 3";
            let sig = s.sign(msg, &kp);
            assert!(s.verify(&sig, msg, &kp.pk), "{name}");
            assert!(!s.verify(&sig, msg, &other.pk), "{name}: wrong pk");
            let mut flipped = msg.to_vec();
            flipped[0] ^= 1;
            assert!(!s.verify(&sig, &flipped, &kp.pk), "{name}: flipped bit");
        }
    }

    #[test]
    fn malformed_signature_is_false_not_panic() {
        for (name, s) in schemes() {
            let kp = s.keygen(1, 0, 7);
            let garbage = Signature([0xAB; SIG_LEN]);
            assert!(!s.verify(&garbage, b"m", &kp.pk), "{name}");
        }
    }

    #[test]
    fn aggregate_of_quorum_verifies() {
        for (name, s) in schemes() {
            let msg = b"precommit h=5 r=0";
            let kps: Vec<_> = (0..10).map(|i| s.keygen(i, 0, 100 + i)).collect();
            let parts: Vec<_> = kps
                .iter()
                .take(7)
                .map(|kp| (kp.pk, s.sign(msg, kp)))
                .collect();
            let agg = s.aggregate(&parts).unwrap();
            assert!(s.verify_aggregate(&agg, msg), "{name}: 7-of-10");
            assert!(!s.verify_aggregate(&agg, b"other message"), "{name}");
        }
    }

    #[test]
    fn forged_constituent_breaks_aggregate() {
        for (name, s) in schemes() {
            let msg = b"vote";
            let kps: Vec<_> = (0..4).map(|i| s.keygen(i, 0, i)).collect();
            let mut parts: Vec<_> = kps.iter().map(|kp| (kp.pk, s.sign(msg, kp))).collect();
            // last signer's signature replaced by a signature on different bytes
            parts[3].1 = s.sign(b"not the vote", &kps[3]);
            let agg = s.aggregate(&parts).unwrap();
            assert!(!s.verify_aggregate(&agg, msg), "{name}");
        }
    }

    #[test]
    fn single_signer_aggregate_is_weighted_signature() {
        for (name, s) in schemes() {
            let msg = b"m";
            let kp = s.keygen(9, 0, 9);
            let sig = s.sign(msg, &kp);
            let agg = s.aggregate(&[(kp.pk, sig)]).unwrap();
            assert!(s.verify_aggregate(&agg, msg), "{name}");
            // weight != 1 in general, so the combined sigma differs from the
            // plain signature but still binds the same message and key
            assert_eq!(agg.signer_pks, vec![kp.pk], "{name}");
        }
    }

    #[test]
    fn compact_encoding_size_is_signer_count_independent() {
        let s = make_scheme(CryptoBackend::Sim);
        let msg = b"m";
        let kps: Vec<_> = (0..10).map(|i| s.keygen(i, 0, i)).collect();
        let context: Vec<_> = kps.iter().map(|kp| kp.pk).collect();

        let one = s.aggregate(&[(kps[0].pk, s.sign(msg, &kps[0]))]).unwrap();
        let all: Vec<_> = kps.iter().map(|kp| (kp.pk, s.sign(msg, kp))).collect();
        let ten = s.aggregate(&all).unwrap();

        let e1 = one.encode_compact(&context);
        let e10 = ten.encode_compact(&context);
        assert_eq!(e1.len(), e10.len());

        let decoded = AggregateSignature::decode_compact(&e10, &context).unwrap();
        assert_eq!(decoded, ten);
        assert!(s.verify_aggregate(&decoded, msg));
    }

    #[test]
    fn h0_is_stable() {
        assert_eq!(h0(b"abc"), h0(b"abc"));
        assert_ne!(h0(b"abc"), h0(b"abd"));
        assert_eq!(h0_parts(&[b"ab", b"c"]), h0(b"abc"));
    }
}
