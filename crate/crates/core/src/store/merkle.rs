//! Sorted-key binary Merkle tree.
//!
//! Leaves are ordered by key bytes. Adjacent nodes are paired bottom-up; an
//! odd node at the end of a level is carried up unchanged.
//!
//! ```text
//! leaf  = H(0x00 || len(key) || key || value)     len is 4-byte big-endian
//! inner = H(0x01 || left || right)
//! empty = H(0x02)
//! ```

use serde::{Deserialize, Serialize};

use crate::encoding::{hash_parts, Canonical, DecodeError, Decoder, Digest, Encoder};

use super::StoreKey;

const LEAF_TAG: u8 = 0x00;
const INNER_TAG: u8 = 0x01;
const EMPTY_TAG: u8 = 0x02;

/// Summary of the full key/value map at one committed height.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct CommitmentRoot(pub Digest);

impl CommitmentRoot {
    pub fn empty() -> Self {
        CommitmentRoot(hash_parts(&[&[EMPTY_TAG]]))
    }

    pub fn digest(&self) -> &Digest {
        &self.0
    }
}

impl std::fmt::Debug for CommitmentRoot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Root({})", &self.0.to_hex()[..16])
    }
}

impl Canonical for CommitmentRoot {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(CommitmentRoot(dec.digest()?))
    }
}

pub fn leaf_hash(key: &[u8], value: &[u8]) -> Digest {
    let len = (key.len() as u32).to_be_bytes();
    hash_parts(&[&[LEAF_TAG], &len, key, value])
}

pub fn inner_hash(left: &Digest, right: &Digest) -> Digest {
    hash_parts(&[&[INNER_TAG], &left.0, &right.0])
}

/// Which side of the running hash the sibling sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditNode {
    pub sibling: Digest,
    pub side: Side,
}

impl AuditNode {
    pub fn fold(&self, running: &Digest) -> Digest {
        match self.side {
            Side::Left => inner_hash(&self.sibling, running),
            Side::Right => inner_hash(running, &self.sibling),
        }
    }
}

impl Canonical for AuditNode {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.sibling).u8(match self.side {
            Side::Left => 0,
            Side::Right => 1,
        });
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let sibling = dec.digest()?;
        let side = match dec.u8()? {
            0 => Side::Left,
            1 => Side::Right,
            tag => return Err(DecodeError::BadTag { what: "side", tag }),
        };
        Ok(AuditNode { sibling, side })
    }
}

/// All levels of the tree, leaves first.
#[derive(Debug, Clone, Default)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn from_leaves(leaves: Vec<Digest>) -> Self {
        let mut levels = vec![leaves];
        while levels.last().is_some_and(|l| l.len() > 1) {
            let prev = levels.last().expect("non-empty");
            let next = prev
                .chunks(2)
                .map(|pair| match pair {
                    [l, r] => inner_hash(l, r),
                    [odd] => *odd,
                    _ => unreachable!(),
                })
                .collect();
            levels.push(next);
        }
        Self { levels }
    }

    pub fn leaf_count(&self) -> usize {
        self.levels.first().map_or(0, Vec::len)
    }

    pub fn leaves(&self) -> &[Digest] {
        self.levels.first().map_or(&[], Vec::as_slice)
    }

    pub fn root(&self) -> CommitmentRoot {
        match self.levels.last() {
            Some(top) if top.len() == 1 => CommitmentRoot(top[0]),
            _ => CommitmentRoot::empty(),
        }
    }

    /// Audit path for the leaf at `index`, bottom-up. Levels where the node was
    /// carried up without a partner contribute no entry.
    pub fn audit_path(&self, mut index: usize) -> Vec<AuditNode> {
        assert!(index < self.leaf_count(), "leaf index out of range");
        let mut path = Vec::new();
        for level in &self.levels[..self.levels.len() - 1] {
            if index % 2 == 1 {
                path.push(AuditNode { sibling: level[index - 1], side: Side::Left });
            } else if index + 1 < level.len() {
                path.push(AuditNode { sibling: level[index + 1], side: Side::Right });
            }
            index /= 2;
        }
        path
    }
}

/// Recomputes the root implied by a leaf and its audit path.
pub fn root_from_path(leaf: Digest, path: &[AuditNode]) -> Digest {
    path.iter().fold(leaf, |acc, node| node.fold(&acc))
}

pub(crate) fn leaf_for(key: &StoreKey, value: &[u8]) -> Digest {
    leaf_hash(key.as_bytes(), value)
}
