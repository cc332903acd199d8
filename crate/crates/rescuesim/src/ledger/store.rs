//! Content-addressed off-chain store.
//!
//! Stands in for a distributed file store at desk scale: a single-process
//! map keyed by content hash, with optional per-vehicle shard labels for
//! bookkeeping and an optional directory of hash-named files for
//! persistence.

use crate::crypto::{h0, Digest32};
use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no content stored under pointer {0}")]
    NotFound(String),
    #[error("persistence failure: {0}")]
    Io(#[from] io::Error),
}

#[derive(Default)]
pub struct ContentStore {
    blobs: BTreeMap<Digest32, Vec<u8>>,
    shard_labels: BTreeMap<Digest32, u64>,
    persist_dir: Option<PathBuf>,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store that mirrors every blob into `dir` as a hex-hash-named file.
    pub fn persistent(dir: PathBuf) -> Result<Self, StoreError> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            persist_dir: Some(dir),
            ..Self::default()
        })
    }

    /// Content-addressed, idempotent insert; the pointer is the data hash.
    pub fn put(&mut self, data: &[u8]) -> Result<Digest32, StoreError> {
        let ptr = h0(data);
        if !self.blobs.contains_key(&ptr) {
            if let Some(dir) = &self.persist_dir {
                std::fs::write(dir.join(ptr.to_hex()), data)?;
            }
            self.blobs.insert(ptr, data.to_vec());
        }
        Ok(ptr)
    }

    /// Insert attributed to the vehicle hosting the shard.
    pub fn put_sharded(&mut self, data: &[u8], vehicle: u64) -> Result<Digest32, StoreError> {
        let ptr = self.put(data)?;
        self.shard_labels.entry(ptr).or_insert(vehicle);
        Ok(ptr)
    }

    pub fn get(&self, ptr: &Digest32) -> Result<&[u8], StoreError> {
        self.blobs
            .get(ptr)
            .map(|v| v.as_slice())
            .ok_or_else(|| StoreError::NotFound(ptr.short_hex()))
    }

    pub fn contains(&self, ptr: &Digest32) -> bool {
        self.blobs.contains_key(ptr)
    }

    pub fn shard_of(&self, ptr: &Digest32) -> Option<u64> {
        self.shard_labels.get(ptr).copied()
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    /// Total stored bytes, for storage-burden metrics.
    pub fn total_bytes(&self) -> usize {
        self.blobs.values().map(|v| v.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_round_trip() {
        let mut store = ContentStore::new();
        let ptr = store.put(b"sensor frame 01").unwrap();
        assert_eq!(ptr, h0(b"sensor frame 01"));
        assert_eq!(store.get(&ptr).unwrap(), b"sensor frame 01");
    }

    #[test]
    fn put_is_idempotent() {
        let mut store = ContentStore::new();
        let a = store.put(b"dup").unwrap();
        let b = store.put(b"dup").unwrap();
        assert_eq!(a, b);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn unknown_pointer_is_not_found() {
        let store = ContentStore::new();
        let missing = h0(b"never stored");
        assert!(matches!(store.get(&missing), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn shard_label_survives_duplicate_put() {
        let mut store = ContentStore::new();
        let ptr = store.put_sharded(b"blob", 3).unwrap();
        store.put_sharded(b"blob", 9).unwrap();
        assert_eq!(store.shard_of(&ptr), Some(3));
    }

    #[test]
    fn persistence_writes_hash_named_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ContentStore::persistent(dir.path().to_path_buf()).unwrap();
        let ptr = store.put(b"persist me").unwrap();
        let on_disk = std::fs::read(dir.path().join(ptr.to_hex())).unwrap();
        assert_eq!(on_disk, b"persist me");
    }
}
