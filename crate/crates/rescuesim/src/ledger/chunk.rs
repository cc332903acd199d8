//! Block partition for proposal dissemination: the serialized block is split
//! into fixed-size chunks hashed into a tree, so receivers verify each chunk
//! against the advertised root before ever deserializing the block.

use super::{Block, LedgerError};
use crate::crypto::merkle::{merkle_prove, merkle_root, merkle_verify, MerkleProof};
use crate::crypto::Digest32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChunkError {
    #[error("chunk {index} fails its inclusion proof")]
    BadProof { index: u32 },
    #[error("chunk set incomplete: have {have} of {total}")]
    Incomplete { have: u32, total: u32 },
    #[error("chunks disagree on totals or roots")]
    Inconsistent,
    #[error("reassembled bytes do not decode: {0}")]
    Undecodable(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockChunk {
    pub index: u32,
    pub total: u32,
    pub chunk_root: Digest32,
    pub data: Vec<u8>,
    pub proof: MerkleProof,
}

impl BlockChunk {
    pub fn verify(&self) -> bool {
        self.proof.leaf_index == self.index as usize
            && merkle_verify(&self.data, &self.proof, &self.chunk_root)
    }
}

/// Splits a block into proof-carrying chunks. Small blocks become a single
/// chunk.
pub fn chunk_block(block: &Block, chunk_size: usize) -> Result<(Vec<BlockChunk>, Digest32), LedgerError> {
    if chunk_size == 0 {
        return Err(LedgerError::ZeroChunkSize);
    }
    let bytes = block.to_bytes();
    let pieces: Vec<&[u8]> = bytes.chunks(chunk_size).collect();
    let root = merkle_root(&pieces)?;
    let total = pieces.len() as u32;
    let chunks = pieces
        .iter()
        .enumerate()
        .map(|(i, piece)| BlockChunk {
            index: i as u32,
            total,
            chunk_root: root,
            data: piece.to_vec(),
            proof: merkle_prove(&pieces, i).expect("index in range"),
        })
        .collect();
    Ok((chunks, root))
}

/// Rebuilds a block from chunks in any arrival order. Every chunk must carry
/// a valid proof against `root`; the first offender is named.
pub fn reassemble(chunks: &[BlockChunk], root: Digest32) -> Result<Block, ChunkError> {
    let Some(first) = chunks.first() else {
        return Err(ChunkError::Incomplete { have: 0, total: 0 });
    };
    let total = first.total;
    if chunks.iter().any(|c| c.total != total || c.chunk_root != root) {
        return Err(ChunkError::Inconsistent);
    }
    let mut ordered: Vec<Option<&BlockChunk>> = vec![None; total as usize];
    for c in chunks {
        if !c.verify() {
            return Err(ChunkError::BadProof { index: c.index });
        }
        if (c.index as usize) < ordered.len() {
            ordered[c.index as usize] = Some(c);
        }
    }
    let have = ordered.iter().filter(|c| c.is_some()).count() as u32;
    if have != total {
        return Err(ChunkError::Incomplete { have, total });
    }
    let mut bytes = Vec::new();
    for c in ordered.into_iter().flatten() {
        bytes.extend_from_slice(&c.data);
    }
    Block::from_bytes(&bytes).map_err(|e| ChunkError::Undecodable(e.to_string()))
}
