//! BLS12-381 backend: minimal-signature variant (signatures in G1, public
//! keys in G2) with weighted multi-signature aggregation.

use super::{
    h1_wide, AggregateSignature, KeyPair, PublicKey, SecretKey, Signature, SignatureScheme,
    PK_LEN, SIG_LEN,
};
use bls12_381::hash_to_curve::{ExpandMsgXmd, HashToCurve};
use bls12_381::{pairing, G1Affine, G1Projective, G2Affine, G2Projective, Scalar};
use group::Curve;
use sha2::{Digest as _, Sha512};

const DST: &[u8] = b"RESCUESIM-BLS12381G1_XMD:SHA-256_SSWU_RO_";

fn hash_to_g1(msg: &[u8]) -> G1Projective {
    <G1Projective as HashToCurve<ExpandMsgXmd<sha2_09::Sha256>>>::hash_to_curve(msg, DST)
}

fn scalar_from_seed(seed: u64, index: u32) -> Scalar {
    let mut hasher = Sha512::new();
    hasher.update(b"pairing-sk");
    hasher.update(seed.to_le_bytes());
    hasher.update(index.to_le_bytes());
    let wide: [u8; 64] = hasher.finalize().into();
    Scalar::from_bytes_wide(&wide)
}

fn weight_scalar(pk: &PublicKey, list: &[PublicKey]) -> Scalar {
    Scalar::from_bytes_wide(&h1_wide(pk, list))
}

fn decode_pk(pk: &PublicKey) -> Option<G2Affine> {
    G2Affine::from_compressed(&pk.0).into_option()
}

fn decode_sig(sig: &Signature) -> Option<G1Affine> {
    G1Affine::from_compressed(&sig.0).into_option()
}

pub struct PairingBls;

impl SignatureScheme for PairingBls {
    fn keygen(&self, owner: u64, index: u32, seed: u64) -> KeyPair {
        let sk_scalar = scalar_from_seed(seed, index);
        let pk_point = (G2Projective::generator() * sk_scalar).to_affine();
        let mut pk = [0u8; PK_LEN];
        pk.copy_from_slice(&pk_point.to_compressed());
        KeyPair {
            owner,
            index,
            sk: SecretKey(sk_scalar.to_bytes()),
            pk: PublicKey(pk),
        }
    }

    fn sign(&self, msg: &[u8], kp: &KeyPair) -> Signature {
        let sk = Scalar::from_bytes(&kp.sk.0).expect("stored secret scalar is canonical");
        let point = (hash_to_g1(msg) * sk).to_affine();
        let mut out = [0u8; SIG_LEN];
        out.copy_from_slice(&point.to_compressed());
        Signature(out)
    }

    fn verify(&self, sig: &Signature, msg: &[u8], pk: &PublicKey) -> bool {
        let (Some(sig_point), Some(pk_point)) = (decode_sig(sig), decode_pk(pk)) else {
            return false;
        };
        let h = hash_to_g1(msg).to_affine();
        pairing(&sig_point, &G2Affine::generator()) == pairing(&h, &pk_point)
    }

    fn aggregate(&self, parts: &[(PublicKey, Signature)]) -> Option<AggregateSignature> {
        if parts.is_empty() {
            return None;
        }
        let signer_pks: Vec<PublicKey> = parts.iter().map(|(pk, _)| *pk).collect();
        let mut acc = G1Projective::identity();
        for (pk, sig) in parts {
            let point = decode_sig(sig)?;
            acc += G1Projective::from(point) * weight_scalar(pk, &signer_pks);
        }
        let mut out = [0u8; SIG_LEN];
        out.copy_from_slice(&acc.to_affine().to_compressed());
        Some(AggregateSignature {
            sigma: Signature(out),
            signer_pks,
        })
    }

    fn verify_aggregate(&self, agg: &AggregateSignature, msg: &[u8]) -> bool {
        if agg.signer_pks.is_empty() {
            return false;
        }
        let Some(sigma) = decode_sig(&agg.sigma) else {
            return false;
        };
        let mut apk = G2Projective::identity();
        for pk in &agg.signer_pks {
            let Some(point) = decode_pk(pk) else {
                return false;
            };
            apk += G2Projective::from(point) * weight_scalar(pk, &agg.signer_pks);
        }
        let h = hash_to_g1(msg).to_affine();
        pairing(&sigma, &G2Affine::generator()) == pairing(&h, &apk.to_affine())
    }
}
