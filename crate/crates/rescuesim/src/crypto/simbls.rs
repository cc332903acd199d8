//! Deterministic simulation backend.
//!
//! Works in the multiplicative group of Z_p, p = 2^61 - 1, with the message
//! hashed to a known exponent: `sign(m, sk) = g^(h(m)*sk)`, which equals
//! `pk^h(m)` and is therefore verifiable without pairings. Discrete logs in
//! this group are not hard, so the backend offers no security — it exists to
//! give consensus tests the exact aggregation algebra (weighted products,
//! constant-size combined signatures) at hash-function speed.

use super::{
    h0, h1_wide, AggregateSignature, KeyPair, PublicKey, SecretKey, Signature, SignatureScheme,
    PK_LEN, SIG_LEN,
};

/// Mersenne prime 2^61 - 1.
const P: u128 = (1u128 << 61) - 1;
const GROUP_ORDER: u128 = P - 1;
const GENERATOR: u128 = 7;

fn pow_mod(mut base: u128, mut exp: u128) -> u128 {
    base %= P;
    let mut acc: u128 = 1;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % P;
        }
        base = base * base % P;
        exp >>= 1;
    }
    acc
}

/// Message exponent in [1, order-1]; zero is avoided so signatures never
/// collapse to the identity.
fn msg_exponent(msg: &[u8]) -> u128 {
    let d = h0(msg);
    let v = u128::from_le_bytes(d.0[..16].try_into().unwrap()) % GROUP_ORDER;
    v.max(1)
}

fn weight_exponent(pk: &PublicKey, list: &[PublicKey]) -> u128 {
    let wide = h1_wide(pk, list);
    let v = u128::from_le_bytes(wide[..16].try_into().unwrap()) % GROUP_ORDER;
    v.max(1)
}

fn pack_element(v: u64, buf: &mut [u8]) {
    buf.fill(0);
    buf[..8].copy_from_slice(&v.to_le_bytes());
}

fn unpack_element(buf: &[u8]) -> Option<u64> {
    // padding must be zero, otherwise the bytes were never produced here
    if buf[8..].iter().any(|&b| b != 0) {
        return None;
    }
    Some(u64::from_le_bytes(buf[..8].try_into().unwrap()))
}

pub struct SimBls;

impl SignatureScheme for SimBls {
    fn keygen(&self, owner: u64, index: u32, seed: u64) -> KeyPair {
        let mut material = Vec::with_capacity(16);
        material.extend_from_slice(b"simbls-sk");
        material.extend_from_slice(&seed.to_le_bytes());
        material.extend_from_slice(&index.to_le_bytes());
        let d = h0(&material);
        let sk_scalar = (u128::from_le_bytes(d.0[..16].try_into().unwrap()) % (GROUP_ORDER - 1)) + 1;
        let pk_val = pow_mod(GENERATOR, sk_scalar) as u64;

        let mut sk = [0u8; 32];
        sk[..16].copy_from_slice(&sk_scalar.to_le_bytes());
        let mut pk = [0u8; PK_LEN];
        pack_element(pk_val, &mut pk);
        KeyPair {
            owner,
            index,
            sk: SecretKey(sk),
            pk: PublicKey(pk),
        }
    }

    fn sign(&self, msg: &[u8], kp: &KeyPair) -> Signature {
        let sk = u128::from_le_bytes(kp.sk.0[..16].try_into().unwrap());
        let e = msg_exponent(msg) * sk % GROUP_ORDER;
        let sig_val = pow_mod(GENERATOR, e) as u64;
        let mut out = [0u8; SIG_LEN];
        pack_element(sig_val, &mut out);
        Signature(out)
    }

    fn verify(&self, sig: &Signature, msg: &[u8], pk: &PublicKey) -> bool {
        let (Some(sig_val), Some(pk_val)) = (unpack_element(&sig.0), unpack_element(&pk.0)) else {
            return false;
        };
        pow_mod(pk_val as u128, msg_exponent(msg)) == sig_val as u128
    }

    fn aggregate(&self, parts: &[(PublicKey, Signature)]) -> Option<AggregateSignature> {
        if parts.is_empty() {
            return None;
        }
        let signer_pks: Vec<PublicKey> = parts.iter().map(|(pk, _)| *pk).collect();
        let mut acc: u128 = 1;
        for (pk, sig) in parts {
            let sig_val = unpack_element(&sig.0)? as u128;
            let w = weight_exponent(pk, &signer_pks);
            acc = acc * pow_mod(sig_val, w) % P;
        }
        let mut out = [0u8; SIG_LEN];
        pack_element(acc as u64, &mut out);
        Some(AggregateSignature {
            sigma: Signature(out),
            signer_pks,
        })
    }

    fn verify_aggregate(&self, agg: &AggregateSignature, msg: &[u8]) -> bool {
        if agg.signer_pks.is_empty() {
            return false;
        }
        let Some(sigma) = unpack_element(&agg.sigma.0) else {
            return false;
        };
        let mut apk: u128 = 1;
        for pk in &agg.signer_pks {
            let Some(pk_val) = unpack_element(&pk.0) else {
                return false;
            };
            let w = weight_exponent(pk, &agg.signer_pks);
            apk = apk * pow_mod(pk_val as u128, w) % P;
        }
        pow_mod(apk, msg_exponent(msg)) == sigma as u128
    }
}
