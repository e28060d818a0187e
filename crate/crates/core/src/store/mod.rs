//! Versioned key/value store with a commitment root per committed height and
//! membership / non-membership proofs against those roots.
//!
//! Writes land in a pending set and become visible to proofs only after
//! [`ProvableStore::commit`]. A transaction overlay can be opened on top of
//! the pending set and either folded in or discarded wholesale, which is how
//! the host ledger gets all-or-nothing transaction semantics.

mod key;
pub mod merkle;
mod proof;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use thiserror::Error;

pub use key::{CommitmentPrefix, StoreKey, MAX_KEY_LEN};
pub use merkle::{AuditNode, CommitmentRoot, MerkleTree, Side};
pub use proof::{
    verify_membership, verify_non_membership, verify_proof, AbsenceProof, CommitmentProof,
    ExistenceProof,
};

use merkle::leaf_for;

pub const MAX_VALUE_LEN: usize = 64 * 1024;
pub const DEFAULT_RETENTION: u64 = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("value of {0} bytes exceeds the 64 KiB limit")]
    ValueTooLarge(usize),
    #[error("key {0} absent at height {1}")]
    KeyAbsent(StoreKey, u64),
    #[error("key {0} present at height {1}")]
    KeyPresent(StoreKey, u64),
    #[error("height {0} has been pruned")]
    HeightPruned(u64),
    #[error("height {0} not yet committed")]
    FutureHeight(u64),
}

type WriteSet = BTreeMap<StoreKey, Option<Vec<u8>>>;

/// Committed state at one height. Entries are sorted by key; leaf `i` of the
/// tree belongs to entry `i`.
#[derive(Debug, Default)]
pub struct Snapshot {
    entries: Vec<(StoreKey, Vec<u8>)>,
    tree: MerkleTree,
}

impl Snapshot {
    fn build(entries: Vec<(StoreKey, Vec<u8>)>, leaves: Vec<crate::encoding::Digest>) -> Self {
        debug_assert_eq!(entries.len(), leaves.len());
        Snapshot { entries, tree: MerkleTree::from_leaves(leaves) }
    }

    pub fn root(&self) -> CommitmentRoot {
        self.tree.root()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn index_of(&self, key: &StoreKey) -> Result<usize, usize> {
        self.entries.binary_search_by(|(k, _)| k.cmp(key))
    }

    pub fn get(&self, key: &StoreKey) -> Option<&[u8]> {
        self.index_of(key).ok().map(|i| self.entries[i].1.as_slice())
    }

    /// Entries whose key starts with `prefix`, in key order.
    pub fn range_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a StoreKey, &'a [u8])> + 'a {
        let start = self.entries.partition_point(|(k, _)| k.as_str() < prefix);
        self.entries[start..]
            .iter()
            .take_while(move |(k, _)| k.as_str().starts_with(prefix))
            .map(|(k, v)| (k, v.as_slice()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StoreKey, &[u8])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    fn existence(&self, index: usize) -> ExistenceProof {
        let (key, value) = &self.entries[index];
        ExistenceProof { key: key.clone(), value: value.clone(), path: self.tree.audit_path(index) }
    }

    pub fn prove_membership(&self, key: &StoreKey) -> Option<CommitmentProof> {
        let i = self.index_of(key).ok()?;
        Some(CommitmentProof::Membership(self.existence(i)))
    }

    pub fn prove_non_membership(&self, key: &StoreKey) -> Option<CommitmentProof> {
        let i = self.index_of(key).err()?;
        let left = i.checked_sub(1).map(|j| self.existence(j));
        let right = (i < self.entries.len()).then(|| self.existence(i));
        Some(CommitmentProof::NonMembership(AbsenceProof { key: key.clone(), left, right }))
    }

    /// New snapshot with `writes` applied. Leaf hashes of untouched entries
    /// are reused.
    fn apply(&self, writes: &WriteSet) -> Snapshot {
        let old_leaves = self.tree.leaves();
        let mut entries = Vec::with_capacity(self.entries.len() + writes.len());
        let mut leaves = Vec::with_capacity(entries.capacity());
        let mut old = self.entries.iter().enumerate().peekable();
        let mut new = writes.iter().peekable();
        loop {
            match (old.peek(), new.peek()) {
                (None, None) => break,
                (Some(_), None) => {
                    let (i, (k, v)) = old.next().expect("peeked");
                    entries.push((k.clone(), v.clone()));
                    leaves.push(old_leaves[i]);
                }
                (Some((_, (ok, _))), Some((nk, _))) if ok < *nk => {
                    let (i, (k, v)) = old.next().expect("peeked");
                    entries.push((k.clone(), v.clone()));
                    leaves.push(old_leaves[i]);
                }
                (Some((_, (ok, _))), Some((nk, _))) if ok == *nk => {
                    old.next();
                    let (k, v) = new.next().expect("peeked");
                    if let Some(v) = v {
                        leaves.push(leaf_for(k, v));
                        entries.push((k.clone(), v.clone()));
                    }
                }
                _ => {
                    let (k, v) = new.next().expect("peeked");
                    if let Some(v) = v {
                        leaves.push(leaf_for(k, v));
                        entries.push((k.clone(), v.clone()));
                    }
                }
            }
        }
        Snapshot::build(entries, leaves)
    }
}

#[derive(Debug, Clone)]
struct Version {
    height: u64,
    snapshot: Arc<Snapshot>,
}

/// Single-writer versioned store. Heights start at 0 (empty map) and each
/// [`commit`](Self::commit) produces the next height.
#[derive(Debug, Clone)]
pub struct ProvableStore {
    versions: VecDeque<Version>,
    pending: WriteSet,
    tx: Option<WriteSet>,
    retention: u64,
}

impl Default for ProvableStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ProvableStore {
    pub fn new() -> Self {
        Self::with_retention(DEFAULT_RETENTION)
    }

    pub fn with_retention(retention: u64) -> Self {
        assert!(retention >= 1);
        let mut versions = VecDeque::new();
        versions.push_back(Version { height: 0, snapshot: Arc::new(Snapshot::default()) });
        Self { versions, pending: WriteSet::new(), tx: None, retention }
    }

    pub fn latest_height(&self) -> u64 {
        self.versions.back().expect("at least one version").height
    }

    pub fn oldest_height(&self) -> u64 {
        self.versions.front().expect("at least one version").height
    }

    fn latest(&self) -> &Snapshot {
        &self.versions.back().expect("at least one version").snapshot
    }

    pub fn set(&mut self, key: &StoreKey, value: Vec<u8>) -> Result<(), StoreError> {
        if value.len() > MAX_VALUE_LEN {
            return Err(StoreError::ValueTooLarge(value.len()));
        }
        self.write_set().insert(key.clone(), Some(value));
        Ok(())
    }

    pub fn delete(&mut self, key: &StoreKey) {
        self.write_set().insert(key.clone(), None);
    }

    fn write_set(&mut self) -> &mut WriteSet {
        match &mut self.tx {
            Some(tx) => tx,
            None => &mut self.pending,
        }
    }

    /// Latest value: open transaction, then pending writes, then last commit.
    pub fn get(&self, key: &StoreKey) -> Option<Vec<u8>> {
        if let Some(v) = self.tx.as_ref().and_then(|tx| tx.get(key)) {
            return v.clone();
        }
        if let Some(v) = self.pending.get(key) {
            return v.clone();
        }
        self.latest().get(key).map(<[u8]>::to_vec)
    }

    /// Keys under `prefix` in the working (uncommitted) view.
    pub fn working_keys_with_prefix(&self, prefix: &str) -> Vec<StoreKey> {
        let mut keys: BTreeMap<StoreKey, bool> = self
            .latest()
            .range_prefix(prefix)
            .map(|(k, _)| (k.clone(), true))
            .collect();
        let layers = std::iter::once(&self.pending).chain(self.tx.as_ref());
        for layer in layers {
            for (k, v) in layer.iter().filter(|(k, _)| k.as_str().starts_with(prefix)) {
                keys.insert(k.clone(), v.is_some());
            }
        }
        keys.into_iter().filter_map(|(k, live)| live.then_some(k)).collect()
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    pub fn begin_tx(&mut self) {
        assert!(self.tx.is_none(), "nested transactions are not supported");
        self.tx = Some(WriteSet::new());
    }

    pub fn commit_tx(&mut self) {
        let tx = self.tx.take().expect("no open transaction");
        self.pending.extend(tx);
    }

    pub fn abort_tx(&mut self) {
        self.tx.take().expect("no open transaction");
    }

    pub fn in_tx(&self) -> bool {
        self.tx.is_some()
    }

    /// Seals pending writes into a new height and returns its root.
    pub fn commit(&mut self) -> CommitmentRoot {
        assert!(self.tx.is_none(), "commit with an open transaction");
        let height = self.latest_height() + 1;
        let snapshot = if self.pending.is_empty() {
            Arc::clone(&self.versions.back().expect("version").snapshot)
        } else {
            let pending = std::mem::take(&mut self.pending);
            Arc::new(self.latest().apply(&pending))
        };
        let root = snapshot.root();
        self.versions.push_back(Version { height, snapshot });
        while self.versions.len() as u64 > self.retention {
            self.versions.pop_front();
        }
        root
    }

    pub fn snapshot(&self, height: u64) -> Result<Arc<Snapshot>, StoreError> {
        if height > self.latest_height() {
            return Err(StoreError::FutureHeight(height));
        }
        let oldest = self.oldest_height();
        if height < oldest {
            return Err(StoreError::HeightPruned(height));
        }
        Ok(Arc::clone(&self.versions[(height - oldest) as usize].snapshot))
    }

    pub fn root_at(&self, height: u64) -> Result<CommitmentRoot, StoreError> {
        Ok(self.snapshot(height)?.root())
    }

    pub fn get_at(&self, height: u64, key: &StoreKey) -> Result<Option<Vec<u8>>, StoreError> {
        Ok(self.snapshot(height)?.get(key).map(<[u8]>::to_vec))
    }

    pub fn prove_membership(&self, height: u64, key: &StoreKey) -> Result<CommitmentProof, StoreError> {
        self.snapshot(height)?
            .prove_membership(key)
            .ok_or_else(|| StoreError::KeyAbsent(key.clone(), height))
    }

    pub fn prove_non_membership(
        &self,
        height: u64,
        key: &StoreKey,
    ) -> Result<CommitmentProof, StoreError> {
        self.snapshot(height)?
            .prove_non_membership(key)
            .ok_or_else(|| StoreError::KeyPresent(key.clone(), height))
    }
}
