//! Binary Merkle tree with duplicate-last padding and domain-separated
//! leaf/node hashing, so an inner node can never be replayed as a leaf.

use super::{Digest32, PK_LEN};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

const LEAF_TAG: u8 = 0x00;
const NODE_TAG: u8 = 0x01;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MerkleError {
    #[error("cannot build a Merkle tree over zero leaves")]
    EmptyLeaves,
    #[error("leaf index {index} out of range for {count} leaves")]
    IndexOutOfRange { index: usize, count: usize },
}

pub fn leaf_hash(data: &[u8]) -> Digest32 {
    let mut h = Sha256::new();
    h.update([LEAF_TAG]);
    h.update(data);
    Digest32(h.finalize().into())
}

fn node_hash(left: &Digest32, right: &Digest32) -> Digest32 {
    let mut h = Sha256::new();
    h.update([NODE_TAG]);
    h.update(left.0);
    h.update(right.0);
    Digest32(h.finalize().into())
}

/// One step of an inclusion proof: the sibling digest and which side it sits on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    pub sibling: Digest32,
    pub sibling_is_right: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf_index: usize,
    pub steps: Vec<ProofStep>,
}

fn level_up(level: &[Digest32]) -> Vec<Digest32> {
    let mut next = Vec::with_capacity(level.len().div_ceil(2));
    for pair in level.chunks(2) {
        let right = if pair.len() == 2 { &pair[1] } else { &pair[0] };
        next.push(node_hash(&pair[0], right));
    }
    next
}

pub fn merkle_root<L: AsRef<[u8]>>(leaves: &[L]) -> Result<Digest32, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyLeaves);
    }
    let mut level: Vec<Digest32> = leaves.iter().map(|l| leaf_hash(l.as_ref())).collect();
    while level.len() > 1 {
        level = level_up(&level);
    }
    Ok(level[0])
}

pub fn merkle_prove<L: AsRef<[u8]>>(
    leaves: &[L],
    index: usize,
) -> Result<MerkleProof, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyLeaves);
    }
    if index >= leaves.len() {
        return Err(MerkleError::IndexOutOfRange {
            index,
            count: leaves.len(),
        });
    }
    let mut level: Vec<Digest32> = leaves.iter().map(|l| leaf_hash(l.as_ref())).collect();
    let mut idx = index;
    let mut steps = Vec::new();
    while level.len() > 1 {
        let sibling_idx = idx ^ 1;
        let sibling = if sibling_idx < level.len() {
            level[sibling_idx]
        } else {
            level[idx] // duplicate-last padding
        };
        steps.push(ProofStep {
            sibling,
            sibling_is_right: idx % 2 == 0,
        });
        level = level_up(&level);
        idx /= 2;
    }
    Ok(MerkleProof {
        leaf_index: index,
        steps,
    })
}

pub fn merkle_verify(leaf_data: &[u8], proof: &MerkleProof, root: &Digest32) -> bool {
    let mut acc = leaf_hash(leaf_data);
    for step in &proof.steps {
        acc = if step.sibling_is_right {
            node_hash(&acc, &step.sibling)
        } else {
            node_hash(&step.sibling, &acc)
        };
    }
    acc == *root
}

/// Root used where a tree is mandatory but the leaf set is empty (a block
/// with no transactions): a single fixed sentinel leaf.
pub fn empty_set_root() -> Digest32 {
    leaf_hash(b"rescuesim:empty-leaf-set")
}

/// Convenience: root of the `PK_LEN`-sized context keys. Kept here so callers
/// never hash key bytes through a different path than proofs do.
pub fn pk_list_digest(pks: &[super::PublicKey]) -> Digest32 {
    let mut h = Sha256::new();
    h.update([NODE_TAG]);
    h.update((pks.len() as u32).to_le_bytes());
    for pk in pks {
        debug_assert_eq!(pk.0.len(), PK_LEN);
        h.update(pk.0);
    }
    Digest32(h.finalize().into())
}
