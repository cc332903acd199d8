//! Blocks, transactions, the off-chain content store, and the commit-proof
//! script carried by every block for misbehavior forensics.
//!
//! All on-wire structures have a canonical, versioned binary form (see
//! [`crate::codec`]); hashes and signatures are always computed over those
//! exact bytes.

pub mod chunk;
pub mod store;

use crate::codec::{CodecError, Reader, Writer};
use crate::crypto::{
    h0, merkle, AggregateSignature, Digest32, KeyPair, PublicKey, Signature, SignatureScheme,
    PK_LEN, SIG_LEN,
};
use crate::NodeId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("transaction {index} rejected: {reason}")]
    InvalidTransaction { index: usize, reason: String },
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("merkle: {0}")]
    Merkle(#[from] merkle::MerkleError),
    #[error("chunk size must be positive")]
    ZeroChunkSize,
}

/// Votes are ledger artifacts: commit proofs embed them and the forensic
/// archive is built from them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VoteKind {
    Prevote,
    Precommit,
}

/// A prevote or precommit for a block hash or nil, signed by one validator.
///
/// The signature covers only `(kind, height, round, value)` so that identical
/// votes from distinct validators aggregate into one multi-signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedVote {
    pub kind: VoteKind,
    pub height: u64,
    pub round: u32,
    /// `None` is the distinguished nil value.
    pub value: Option<Digest32>,
    pub voter: NodeId,
    pub signature: Signature,
}

/// The shared byte string all validators sign when voting identically.
pub fn vote_sign_bytes(kind: VoteKind, height: u64, round: u32, value: Option<Digest32>) -> Vec<u8> {
    let mut w = Writer::with_version();
    w.put_raw(b"vote");
    w.put_u8(match kind {
        VoteKind::Prevote => 0,
        VoteKind::Precommit => 1,
    });
    w.put_u64(height);
    w.put_u32(round);
    match value {
        None => w.put_u8(0),
        Some(h) => {
            w.put_u8(1);
            w.put_raw(&h.0);
        }
    }
    w.finish()
}

impl SignedVote {
    pub fn sign_bytes(&self) -> Vec<u8> {
        vote_sign_bytes(self.kind, self.height, self.round, self.value)
    }

    pub fn encode(&self, w: &mut Writer) {
        w.put_u8(match self.kind {
            VoteKind::Prevote => 0,
            VoteKind::Precommit => 1,
        });
        w.put_u64(self.height);
        w.put_u32(self.round);
        match self.value {
            None => w.put_u8(0),
            Some(h) => {
                w.put_u8(1);
                w.put_raw(&h.0);
            }
        }
        w.put_u64(self.voter);
        w.put_raw(&self.signature.0);
    }

    pub fn decode(r: &mut Reader) -> Result<Self, CodecError> {
        let kind = match r.get_u8()? {
            0 => VoteKind::Prevote,
            1 => VoteKind::Precommit,
            tag => return Err(CodecError::BadTag { tag, context: "vote kind" }),
        };
        let height = r.get_u64()?;
        let round = r.get_u32()?;
        let value = match r.get_u8()? {
            0 => None,
            1 => Some(Digest32(r.get_raw(32)?.try_into().unwrap())),
            tag => return Err(CodecError::BadTag { tag, context: "vote value" }),
        };
        let voter = r.get_u64()?;
        let signature = Signature(r.get_raw(SIG_LEN)?.try_into().unwrap());
        Ok(Self { kind, height, round, value, voter, signature })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        Self::decode(&mut Reader::new(bytes))
    }
}

fn encode_pk_list(w: &mut Writer, pks: &[PublicKey]) {
    w.put_u32(pks.len() as u32);
    for pk in pks {
        w.put_raw(&pk.0);
    }
}

fn decode_pk_list(r: &mut Reader) -> Result<Vec<PublicKey>, CodecError> {
    let n = r.get_u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(PublicKey(r.get_raw(PK_LEN)?.try_into().unwrap()));
    }
    Ok(out)
}

fn encode_agg(w: &mut Writer, agg: &AggregateSignature) {
    w.put_raw(&agg.sigma.0);
    encode_pk_list(w, &agg.signer_pks);
}

fn decode_agg(r: &mut Reader) -> Result<AggregateSignature, CodecError> {
    let sigma = Signature(r.get_raw(SIG_LEN)?.try_into().unwrap());
    let signer_pks = decode_pk_list(r)?;
    Ok(AggregateSignature { sigma, signer_pks })
}

/// Off-chain storage transaction: the on-chain pointer record for data held
/// in the content store, signed by the owning UAV and multi-signed by the
/// vehicles that executed and stored it.
#[derive(Clone, Debug, PartialEq)]
pub struct OffchainTx {
    pub uav_pk: PublicKey,
    pub vehicle_pks: Vec<PublicKey>,
    pub raw_ptr: Digest32,
    pub out_ptr: Digest32,
    pub description: String,
    pub timestamp_us: u64,
    pub uav_sig: Signature,
    pub vehicle_multisig: AggregateSignature,
    pub store_cert: Digest32,
}

impl OffchainTx {
    pub fn sign_bytes(
        uav_pk: &PublicKey,
        vehicle_pks: &[PublicKey],
        raw_ptr: &Digest32,
        out_ptr: &Digest32,
        description: &str,
        timestamp_us: u64,
    ) -> Vec<u8> {
        let mut w = Writer::with_version();
        w.put_raw(b"txdata");
        w.put_raw(&uav_pk.0);
        encode_pk_list(&mut w, vehicle_pks);
        w.put_raw(&raw_ptr.0);
        w.put_raw(&out_ptr.0);
        w.put_str(description);
        w.put_u64(timestamp_us);
        w.finish()
    }

    fn encode(&self, w: &mut Writer) {
        w.put_raw(&self.uav_pk.0);
        encode_pk_list(w, &self.vehicle_pks);
        w.put_raw(&self.raw_ptr.0);
        w.put_raw(&self.out_ptr.0);
        w.put_str(&self.description);
        w.put_u64(self.timestamp_us);
        w.put_raw(&self.uav_sig.0);
        encode_agg(w, &self.vehicle_multisig);
        w.put_raw(&self.store_cert.0);
    }

    fn decode(r: &mut Reader) -> Result<Self, CodecError> {
        Ok(Self {
            uav_pk: PublicKey(r.get_raw(PK_LEN)?.try_into().unwrap()),
            vehicle_pks: decode_pk_list(r)?,
            raw_ptr: Digest32(r.get_raw(32)?.try_into().unwrap()),
            out_ptr: Digest32(r.get_raw(32)?.try_into().unwrap()),
            description: r.get_str()?,
            timestamp_us: r.get_u64()?,
            uav_sig: Signature(r.get_raw(SIG_LEN)?.try_into().unwrap()),
            vehicle_multisig: decode_agg(r)?,
            store_cert: Digest32(r.get_raw(32)?.try_into().unwrap()),
        })
    }
}

/// Misbehavior report filed by an informer group. The fee is fixed by config
/// and forfeited when the evidence does not check out.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportTx {
    pub accused_pk: PublicKey,
    pub informer_pks: Vec<PublicKey>,
    pub evidence: Vec<u8>,
    /// Report fee in milli-cents.
    pub fee: u64,
    pub timestamp_us: u64,
    pub informer_multisig: AggregateSignature,
}

impl ReportTx {
    pub fn sign_bytes(
        accused_pk: &PublicKey,
        informer_pks: &[PublicKey],
        evidence: &[u8],
        fee: u64,
        timestamp_us: u64,
    ) -> Vec<u8> {
        let mut w = Writer::with_version();
        w.put_raw(b"txrep");
        w.put_raw(&accused_pk.0);
        encode_pk_list(&mut w, informer_pks);
        w.put_bytes(evidence);
        w.put_u64(fee);
        w.put_u64(timestamp_us);
        w.finish()
    }

    fn encode(&self, w: &mut Writer) {
        w.put_raw(&self.accused_pk.0);
        encode_pk_list(w, &self.informer_pks);
        w.put_bytes(&self.evidence);
        w.put_u64(self.fee);
        w.put_u64(self.timestamp_us);
        encode_agg(w, &self.informer_multisig);
    }

    fn decode(r: &mut Reader) -> Result<Self, CodecError> {
        Ok(Self {
            accused_pk: PublicKey(r.get_raw(PK_LEN)?.try_into().unwrap()),
            informer_pks: decode_pk_list(r)?,
            evidence: r.get_bytes()?.to_vec(),
            fee: r.get_u64()?,
            timestamp_us: r.get_u64()?,
            informer_multisig: decode_agg(r)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Transaction {
    /// Opaque payload, used for workload generation.
    Payload(Vec<u8>),
    Offchain(OffchainTx),
    Report(ReportTx),
}

impl Transaction {
    pub fn encode(&self, w: &mut Writer) {
        match self {
            Transaction::Payload(data) => {
                w.put_u8(0);
                w.put_bytes(data);
            }
            Transaction::Offchain(tx) => {
                w.put_u8(1);
                tx.encode(w);
            }
            Transaction::Report(tx) => {
                w.put_u8(2);
                tx.encode(w);
            }
        }
    }

    pub fn decode(r: &mut Reader) -> Result<Self, CodecError> {
        match r.get_u8()? {
            0 => Ok(Transaction::Payload(r.get_bytes()?.to_vec())),
            1 => Ok(Transaction::Offchain(OffchainTx::decode(r)?)),
            2 => Ok(Transaction::Report(ReportTx::decode(r)?)),
            tag => Err(CodecError::BadTag { tag, context: "transaction" }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.finish()
    }

    /// Signature-level validity; pointer resolution is checked separately
    /// against a store when one is in scope.
    pub fn check_signatures(&self, scheme: &dyn SignatureScheme) -> Result<(), String> {
        match self {
            Transaction::Payload(_) => Ok(()),
            Transaction::Offchain(tx) => {
                let bytes = OffchainTx::sign_bytes(
                    &tx.uav_pk,
                    &tx.vehicle_pks,
                    &tx.raw_ptr,
                    &tx.out_ptr,
                    &tx.description,
                    tx.timestamp_us,
                );
                if !scheme.verify(&tx.uav_sig, &bytes, &tx.uav_pk) {
                    return Err("owner signature invalid".into());
                }
                if !scheme.verify_aggregate(&tx.vehicle_multisig, &bytes) {
                    return Err("vehicle multi-signature invalid".into());
                }
                Ok(())
            }
            Transaction::Report(tx) => {
                let bytes = ReportTx::sign_bytes(
                    &tx.accused_pk,
                    &tx.informer_pks,
                    &tx.evidence,
                    tx.fee,
                    tx.timestamp_us,
                );
                if !scheme.verify_aggregate(&tx.informer_multisig, &bytes) {
                    return Err("informer multi-signature invalid".into());
                }
                Ok(())
            }
        }
    }
}

/// Commit proof: the precommit quorum that committed a height, plus the root
/// of (and off-chain pointer to) the full vote archive justifying it.
#[derive(Clone, Debug, PartialEq)]
pub struct LastProof {
    pub height: u64,
    pub round: u32,
    pub block_hash: Digest32,
    pub agg: AggregateSignature,
    /// Same order as `agg.signer_pks`.
    pub voters: Vec<NodeId>,
    pub votes_root: Digest32,
    pub votes_ptr: Digest32,
}

impl LastProof {
    pub fn encode(&self, w: &mut Writer) {
        w.put_u64(self.height);
        w.put_u32(self.round);
        w.put_raw(&self.block_hash.0);
        encode_agg(w, &self.agg);
        w.put_u32(self.voters.len() as u32);
        for v in &self.voters {
            w.put_u64(*v);
        }
        w.put_raw(&self.votes_root.0);
        w.put_raw(&self.votes_ptr.0);
    }

    pub fn decode(r: &mut Reader) -> Result<Self, CodecError> {
        let height = r.get_u64()?;
        let round = r.get_u32()?;
        let block_hash = Digest32(r.get_raw(32)?.try_into().unwrap());
        let agg = decode_agg(r)?;
        let n = r.get_u32()? as usize;
        let mut voters = Vec::with_capacity(n);
        for _ in 0..n {
            voters.push(r.get_u64()?);
        }
        Ok(Self {
            height,
            round,
            block_hash,
            agg,
            voters,
            votes_root: Digest32(r.get_raw(32)?.try_into().unwrap()),
            votes_ptr: Digest32(r.get_raw(32)?.try_into().unwrap()),
        })
    }

    /// Strict quorum: more than 2Z/3 precommits present and the aggregate
    /// verifies over the shared precommit bytes.
    pub fn verify(&self, committee_size: usize, scheme: &dyn SignatureScheme) -> bool {
        if self.voters.len() != self.agg.signer_pks.len() {
            return false;
        }
        if self.voters.len() <= commit_quorum_floor(committee_size) {
            return false;
        }
        let bytes =
            vote_sign_bytes(VoteKind::Precommit, self.height, self.round, Some(self.block_hash));
        scheme.verify_aggregate(&self.agg, &bytes)
    }
}

/// Largest vote count that is still NOT a quorum: floor(2Z/3). A quorum is
/// any strictly greater count.
pub fn commit_quorum_floor(committee_size: usize) -> usize {
    2 * committee_size / 3
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockHeader {
    pub prev_hash: Digest32,
    pub height: u64,
    pub round: u32,
    pub tx_root: Digest32,
    pub proposer: NodeId,
    pub proposer_pk: PublicKey,
    pub timestamp_us: u64,
    pub last_proof: Option<LastProof>,
    pub proposer_sig: Signature,
    pub this_hash: Digest32,
}

impl BlockHeader {
    /// Bytes covered by the proposer signature.
    fn content_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_version();
        w.put_raw(b"blockheader");
        w.put_raw(&self.prev_hash.0);
        w.put_u64(self.height);
        w.put_u32(self.round);
        w.put_raw(&self.tx_root.0);
        w.put_u64(self.proposer);
        w.put_raw(&self.proposer_pk.0);
        w.put_u64(self.timestamp_us);
        match &self.last_proof {
            None => w.put_u8(0),
            Some(p) => {
                w.put_u8(1);
                p.encode(&mut w);
            }
        }
        w.finish()
    }

    /// `this_hash` covers every header field except itself.
    pub fn compute_hash(&self) -> Digest32 {
        let mut bytes = self.content_bytes();
        bytes.extend_from_slice(&self.proposer_sig.0);
        h0(&bytes)
    }

    pub fn encode(&self, w: &mut Writer) {
        w.put_raw(&self.prev_hash.0);
        w.put_u64(self.height);
        w.put_u32(self.round);
        w.put_raw(&self.tx_root.0);
        w.put_u64(self.proposer);
        w.put_raw(&self.proposer_pk.0);
        w.put_u64(self.timestamp_us);
        match &self.last_proof {
            None => w.put_u8(0),
            Some(p) => {
                w.put_u8(1);
                p.encode(w);
            }
        }
        w.put_raw(&self.proposer_sig.0);
        w.put_raw(&self.this_hash.0);
    }

    pub fn decode(r: &mut Reader) -> Result<Self, CodecError> {
        let prev_hash = Digest32(r.get_raw(32)?.try_into().unwrap());
        let height = r.get_u64()?;
        let round = r.get_u32()?;
        let tx_root = Digest32(r.get_raw(32)?.try_into().unwrap());
        let proposer = r.get_u64()?;
        let proposer_pk = PublicKey(r.get_raw(PK_LEN)?.try_into().unwrap());
        let timestamp_us = r.get_u64()?;
        let last_proof = match r.get_u8()? {
            0 => None,
            1 => Some(LastProof::decode(r)?),
            tag => return Err(CodecError::BadTag { tag, context: "last_proof" }),
        };
        let proposer_sig = Signature(r.get_raw(SIG_LEN)?.try_into().unwrap());
        let this_hash = Digest32(r.get_raw(32)?.try_into().unwrap());
        Ok(Self {
            prev_hash,
            height,
            round,
            tx_root,
            proposer,
            proposer_pk,
            timestamp_us,
            last_proof,
            proposer_sig,
            this_hash,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub header: BlockHeader,
    pub txs: Vec<Transaction>,
}

impl Block {
    pub fn hash(&self) -> Digest32 {
        self.header.this_hash
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_version();
        self.header.encode(&mut w);
        w.put_u32(self.txs.len() as u32);
        for tx in &self.txs {
            tx.encode(&mut w);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::with_version(bytes)?;
        let header = BlockHeader::decode(&mut r)?;
        let n = r.get_u32()? as usize;
        let mut txs = Vec::with_capacity(n);
        for _ in 0..n {
            txs.push(Transaction::decode(&mut r)?);
        }
        Ok(Self { header, txs })
    }

    /// Deterministic chain origin shared by every node. Height 0, zero parent
    /// hash, sentinel proposer, no commit proof.
    pub fn genesis(timestamp_us: u64) -> Self {
        let mut header = BlockHeader {
            prev_hash: Digest32::ZERO,
            height: 0,
            round: 0,
            tx_root: merkle::empty_set_root(),
            proposer: NodeId::MAX,
            proposer_pk: PublicKey([0; PK_LEN]),
            timestamp_us,
            last_proof: None,
            proposer_sig: Signature([0; SIG_LEN]),
            this_hash: Digest32::ZERO,
        };
        header.this_hash = header.compute_hash();
        Self { header, txs: Vec::new() }
    }
}

/// Root of the transaction tree; an empty set uses a fixed sentinel leaf.
pub fn tx_root(txs: &[Transaction]) -> Digest32 {
    if txs.is_empty() {
        return merkle::empty_set_root();
    }
    let leaves: Vec<Vec<u8>> = txs.iter().map(|tx| tx.to_bytes()).collect();
    merkle::merkle_root(&leaves).expect("non-empty leaves")
}

/// Builds and signs a block over individually valid transactions.
pub fn assemble_block(
    txs: Vec<Transaction>,
    parent_hash: Digest32,
    height: u64,
    round: u32,
    proposer: &KeyPair,
    last_proof: Option<LastProof>,
    timestamp_us: u64,
    scheme: &dyn SignatureScheme,
) -> Result<Block, LedgerError> {
    for (index, tx) in txs.iter().enumerate() {
        tx.check_signatures(scheme)
            .map_err(|reason| LedgerError::InvalidTransaction { index, reason })?;
    }
    let mut header = BlockHeader {
        prev_hash: parent_hash,
        height,
        round,
        tx_root: tx_root(&txs),
        proposer: proposer.owner,
        proposer_pk: proposer.pk,
        timestamp_us,
        last_proof,
        proposer_sig: Signature([0; SIG_LEN]),
        this_hash: Digest32::ZERO,
    };
    header.proposer_sig = scheme.sign(&header.content_bytes(), proposer);
    header.this_hash = header.compute_hash();
    Ok(Block { header, txs })
}

/// Everything the validator knows that a candidate block must agree with.
pub struct ValidationContext<'a> {
    pub parent_hash: Digest32,
    pub parent_height: u64,
    pub expected_round: u32,
    pub expected_proposer: NodeId,
    /// Registered key of the expected proposer.
    pub proposer_pk: PublicKey,
    /// Committee size at the parent height, for the commit-proof quorum.
    pub prev_committee_size: usize,
    /// Keys of nodes eligible to have precommitted the parent.
    pub prev_validator_pks: &'a BTreeMap<NodeId, PublicKey>,
    /// Height 1 has no committed parent proof to carry.
    pub require_last_proof: bool,
}

/// Names the first rule a bad block breaks; feeds wrong-block-creation
/// detection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockFault {
    HashMismatch,
    ParentHash,
    Height { expected: u64, got: u64 },
    Round { expected: u32, got: u32 },
    TxRoot,
    Proposer { expected: NodeId, got: NodeId },
    ProposerSig,
    Tx { index: u32 },
    LastProofMissing,
    LastProofQuorum { got: u32, need_more_than: u32 },
    LastProofTarget,
    LastProofSig,
    LastProofSigner,
}

impl std::fmt::Display for BlockFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockVerdict {
    Valid,
    Invalid(BlockFault),
}

impl BlockVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, BlockVerdict::Valid)
    }
}

/// Full structural and cryptographic block check. Returns the first failed
/// rule rather than erroring, so callers can attribute misbehavior.
pub fn validate_block(
    block: &Block,
    ctx: &ValidationContext,
    scheme: &dyn SignatureScheme,
) -> BlockVerdict {
    use BlockFault::*;
    let header = &block.header;

    if header.compute_hash() != header.this_hash {
        return BlockVerdict::Invalid(HashMismatch);
    }
    if header.prev_hash != ctx.parent_hash {
        return BlockVerdict::Invalid(ParentHash);
    }
    if header.height != ctx.parent_height + 1 {
        return BlockVerdict::Invalid(Height {
            expected: ctx.parent_height + 1,
            got: header.height,
        });
    }
    if header.round != ctx.expected_round {
        return BlockVerdict::Invalid(Round {
            expected: ctx.expected_round,
            got: header.round,
        });
    }
    if tx_root(&block.txs) != header.tx_root {
        return BlockVerdict::Invalid(TxRoot);
    }
    if header.proposer != ctx.expected_proposer {
        return BlockVerdict::Invalid(Proposer {
            expected: ctx.expected_proposer,
            got: header.proposer,
        });
    }
    if header.proposer_pk != ctx.proposer_pk
        || !scheme.verify(&header.proposer_sig, &header.content_bytes(), &ctx.proposer_pk)
    {
        return BlockVerdict::Invalid(ProposerSig);
    }
    for (index, tx) in block.txs.iter().enumerate() {
        if tx.check_signatures(scheme).is_err() {
            return BlockVerdict::Invalid(Tx { index: index as u32 });
        }
    }
    match &header.last_proof {
        None => {
            if ctx.require_last_proof {
                return BlockVerdict::Invalid(LastProofMissing);
            }
        }
        Some(proof) => {
            if proof.block_hash != header.prev_hash || proof.height + 1 != header.height {
                return BlockVerdict::Invalid(LastProofTarget);
            }
            let floor = commit_quorum_floor(ctx.prev_committee_size);
            if proof.voters.len() <= floor {
                return BlockVerdict::Invalid(LastProofQuorum {
                    got: proof.voters.len() as u32,
                    need_more_than: floor as u32,
                });
            }
            for (voter, pk) in proof.voters.iter().zip(&proof.agg.signer_pks) {
                if ctx.prev_validator_pks.get(voter) != Some(pk) {
                    return BlockVerdict::Invalid(LastProofSigner);
                }
            }
            if !proof.verify(ctx.prev_committee_size, scheme) {
                return BlockVerdict::Invalid(LastProofSig);
            }
        }
    }
    BlockVerdict::Valid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{make_scheme, CryptoBackend};

    fn scheme() -> Box<dyn SignatureScheme> {
        make_scheme(CryptoBackend::Sim)
    }

    fn payloads(n: usize) -> Vec<Transaction> {
        (0..n)
            .map(|i| Transaction::Payload(format!("tx-{i}").into_bytes()))
            .collect()
    }

    fn make_proof(
        height: u64,
        round: u32,
        hash: Digest32,
        signers: &[KeyPair],
        scheme: &dyn SignatureScheme,
    ) -> LastProof {
        let bytes = vote_sign_bytes(VoteKind::Precommit, height, round, Some(hash));
        let parts: Vec<_> = signers.iter().map(|kp| (kp.pk, scheme.sign(&bytes, kp))).collect();
        LastProof {
            height,
            round,
            block_hash: hash,
            agg: scheme.aggregate(&parts).unwrap(),
            voters: signers.iter().map(|kp| kp.owner).collect(),
            votes_root: merkle::empty_set_root(),
            votes_ptr: Digest32::ZERO,
        }
    }

    #[test]
    fn assemble_and_roundtrip_block() {
        let s = scheme();
        let kp = s.keygen(1, 0, 1);
        let genesis = Block::genesis(0);
        let block = assemble_block(
            payloads(3),
            genesis.hash(),
            1,
            0,
            &kp,
            None,
            1_000_000,
            s.as_ref(),
        )
        .unwrap();
        let bytes = block.to_bytes();
        let decoded = Block::from_bytes(&bytes).unwrap();
        assert_eq!(decoded, block);
        assert_eq!(decoded.hash(), block.header.compute_hash());
    }

    #[test]
    fn empty_block_uses_sentinel_tx_root() {
        let s = scheme();
        let kp = s.keygen(1, 0, 1);
        let block =
            assemble_block(vec![], Digest32::ZERO, 1, 0, &kp, None, 0, s.as_ref()).unwrap();
        assert_eq!(block.header.tx_root, merkle::empty_set_root());
    }

    #[test]
    fn large_block_tx_root_matches_recomputation() {
        let s = scheme();
        let kp = s.keygen(1, 0, 1);
        let txs = payloads(1000);
        let block =
            assemble_block(txs.clone(), Digest32::ZERO, 1, 0, &kp, None, 0, s.as_ref()).unwrap();
        assert_eq!(block.header.tx_root, tx_root(&txs));
    }

    #[test]
    fn invalid_tx_rejected_with_offender_index() {
        let s = scheme();
        let kp = s.keygen(1, 0, 1);
        let informer = s.keygen(2, 0, 2);
        // report tx whose multisig covers different bytes than it claims
        let bogus_agg = s
            .aggregate(&[(informer.pk, s.sign(b"unrelated", &informer))])
            .unwrap();
        let bad = Transaction::Report(ReportTx {
            accused_pk: kp.pk,
            informer_pks: vec![informer.pk],
            evidence: b"ev".to_vec(),
            fee: 1000,
            timestamp_us: 5,
            informer_multisig: bogus_agg,
        });
        let mut txs = payloads(2);
        txs.push(bad);
        let err = assemble_block(txs, Digest32::ZERO, 1, 0, &kp, None, 0, s.as_ref());
        match err {
            Err(LedgerError::InvalidTransaction { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected invalid tx, got {other:?}"),
        }
    }

    fn committee(s: &dyn SignatureScheme, n: usize) -> (Vec<KeyPair>, BTreeMap<NodeId, PublicKey>) {
        let kps: Vec<_> = (0..n as u64).map(|i| s.keygen(i, 0, 100 + i)).collect();
        let pks = kps.iter().map(|kp| (kp.owner, kp.pk)).collect();
        (kps, pks)
    }

    #[test]
    fn validate_block_happy_path_and_faults() {
        let s = scheme();
        let (kps, pks) = committee(s.as_ref(), 10);
        let genesis = Block::genesis(0);
        let parent = assemble_block(
            payloads(1),
            genesis.hash(),
            1,
            0,
            &kps[0],
            None,
            10,
            s.as_ref(),
        )
        .unwrap();
        let proof = make_proof(1, 0, parent.hash(), &kps[..7], s.as_ref());
        let block = assemble_block(
            payloads(2),
            parent.hash(),
            2,
            0,
            &kps[1],
            Some(proof.clone()),
            20,
            s.as_ref(),
        )
        .unwrap();

        let ctx = ValidationContext {
            parent_hash: parent.hash(),
            parent_height: 1,
            expected_round: 0,
            expected_proposer: 1,
            proposer_pk: kps[1].pk,
            prev_committee_size: 10,
            prev_validator_pks: &pks,
            require_last_proof: true,
        };
        assert_eq!(validate_block(&block, &ctx, s.as_ref()), BlockVerdict::Valid);

        // same block, checked against the wrong expected height
        let bad_height_ctx = ValidationContext { parent_height: 4, ..ctx };
        assert!(matches!(
            validate_block(&block, &bad_height_ctx, s.as_ref()),
            BlockVerdict::Invalid(BlockFault::Height { .. })
        ));

        // wrong parent linkage
        let bad_parent_ctx = ValidationContext {
            parent_hash: genesis.hash(),
            parent_height: 1,
            expected_round: 0,
            expected_proposer: 1,
            proposer_pk: kps[1].pk,
            prev_committee_size: 10,
            prev_validator_pks: &pks,
            require_last_proof: true,
        };
        assert_eq!(
            validate_block(&block, &bad_parent_ctx, s.as_ref()),
            BlockVerdict::Invalid(BlockFault::ParentHash)
        );

        // unexpected proposer
        let bad_proposer_ctx = ValidationContext {
            parent_hash: parent.hash(),
            parent_height: 1,
            expected_round: 0,
            expected_proposer: 5,
            proposer_pk: kps[5].pk,
            prev_committee_size: 10,
            prev_validator_pks: &pks,
            require_last_proof: true,
        };
        assert!(matches!(
            validate_block(&block, &bad_proposer_ctx, s.as_ref()),
            BlockVerdict::Invalid(BlockFault::Proposer { .. })
        ));
    }

    #[test]
    fn quorum_boundary_is_strictly_greater_than_two_thirds() {
        let s = scheme();
        let (kps, pks) = committee(s.as_ref(), 10);
        let genesis = Block::genesis(0);
        let parent =
            assemble_block(vec![], genesis.hash(), 1, 0, &kps[0], None, 10, s.as_ref()).unwrap();

        // floor(2*10/3) = 6: six precommits fail, seven pass
        for (n, ok) in [(6usize, false), (7usize, true)] {
            let proof = make_proof(1, 0, parent.hash(), &kps[..n], s.as_ref());
            let block = assemble_block(
                vec![],
                parent.hash(),
                2,
                0,
                &kps[1],
                Some(proof),
                20,
                s.as_ref(),
            )
            .unwrap();
            let ctx = ValidationContext {
                parent_hash: parent.hash(),
                parent_height: 1,
                expected_round: 0,
                expected_proposer: 1,
                proposer_pk: kps[1].pk,
                prev_committee_size: 10,
                prev_validator_pks: &pks,
                require_last_proof: true,
            };
            let verdict = validate_block(&block, &ctx, s.as_ref());
            if ok {
                assert_eq!(verdict, BlockVerdict::Valid, "{n} precommits");
            } else {
                assert!(
                    matches!(verdict, BlockVerdict::Invalid(BlockFault::LastProofQuorum { .. })),
                    "{n} precommits gave {verdict:?}"
                );
            }
        }
    }

    #[test]
    fn vote_roundtrip_and_shared_sign_bytes() {
        let s = scheme();
        let kp = s.keygen(3, 0, 3);
        let bytes = vote_sign_bytes(VoteKind::Prevote, 7, 2, None);
        let vote = SignedVote {
            kind: VoteKind::Prevote,
            height: 7,
            round: 2,
            value: None,
            voter: 3,
            signature: s.sign(&bytes, &kp),
        };
        let decoded = SignedVote::from_bytes(&vote.to_bytes()).unwrap();
        assert_eq!(decoded, vote);
        assert!(s.verify(&decoded.signature, &decoded.sign_bytes(), &kp.pk));
        // two voters over the same (kind,h,r,value) sign identical bytes
        assert_eq!(vote.sign_bytes(), vote_sign_bytes(VoteKind::Prevote, 7, 2, None));
    }
}
