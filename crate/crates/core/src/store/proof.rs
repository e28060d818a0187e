use serde::{Deserialize, Serialize};

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

use super::merkle::{leaf_for, root_from_path, AuditNode, CommitmentRoot, Side};
use super::StoreKey;

/// A leaf together with the audit path binding it to a root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExistenceProof {
    pub key: StoreKey,
    #[serde(with = "crate::serde_hex")]
    pub value: Vec<u8>,
    pub path: Vec<AuditNode>,
}

impl ExistenceProof {
    pub fn computed_root(&self) -> CommitmentRoot {
        CommitmentRoot(root_from_path(leaf_for(&self.key, &self.value), &self.path))
    }

    pub fn verifies(&self, root: &CommitmentRoot) -> bool {
        self.computed_root() == *root
    }

    /// Leaf is the last one of the subtree spanned by `path[..upto]`.
    fn rightmost_below(&self, upto: usize) -> bool {
        self.path[..upto].iter().all(|n| n.side == Side::Left)
    }

    fn leftmost_below(&self, upto: usize) -> bool {
        self.path[..upto].iter().all(|n| n.side == Side::Right)
    }

    fn subtree_hash(&self, upto: usize) -> crate::encoding::Digest {
        root_from_path(leaf_for(&self.key, &self.value), &self.path[..upto])
    }
}

impl Canonical for ExistenceProof {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.key).bytes(&self.value).list(&self.path);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(ExistenceProof { key: dec.get()?, value: dec.bytes()?, path: dec.list()? })
    }
}

/// Absence of `key`, shown by its lexicographic neighbours being adjacent
/// leaves. A missing neighbour means the key lies beyond that end of the tree;
/// both missing means the tree is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsenceProof {
    pub key: StoreKey,
    pub left: Option<ExistenceProof>,
    pub right: Option<ExistenceProof>,
}

impl AbsenceProof {
    pub fn verifies(&self, root: &CommitmentRoot) -> bool {
        match (&self.left, &self.right) {
            (None, None) => *root == CommitmentRoot::empty(),
            (Some(l), None) => {
                l.key < self.key && l.verifies(root) && l.rightmost_below(l.path.len())
            }
            (None, Some(r)) => {
                self.key < r.key && r.verifies(root) && r.leftmost_below(r.path.len())
            }
            (Some(l), Some(r)) => {
                if !(l.key < self.key && self.key < r.key) {
                    return false;
                }
                if !(l.verifies(root) && r.verifies(root)) {
                    return false;
                }
                adjacent(l, r)
            }
        }
    }
}

/// `l` is the rightmost leaf of the left child of some node and `r` the
/// leftmost leaf of its right child, with identical paths above that node.
fn adjacent(l: &ExistenceProof, r: &ExistenceProof) -> bool {
    let Some(a) = l.path.iter().position(|n| n.side == Side::Right) else {
        return false;
    };
    let Some(b) = r.path.iter().position(|n| n.side == Side::Left) else {
        return false;
    };
    l.rightmost_below(a)
        && r.leftmost_below(b)
        && l.path[a + 1..] == r.path[b + 1..]
        && l.path[a].sibling == r.subtree_hash(b)
        && r.path[b].sibling == l.subtree_hash(a)
}

impl Canonical for AbsenceProof {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.key).option(self.left.as_ref()).option(self.right.as_ref());
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AbsenceProof { key: dec.get()?, left: dec.option()?, right: dec.option()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommitmentProof {
    Membership(ExistenceProof),
    NonMembership(AbsenceProof),
}

impl CommitmentProof {
    /// Placeholder carried in datagrams whose verifier ignores proofs
    /// (loopback clients).
    pub fn unused() -> Self {
        CommitmentProof::NonMembership(AbsenceProof {
            key: StoreKey::new("unused").expect("valid key"),
            left: None,
            right: None,
        })
    }

    pub fn key(&self) -> &StoreKey {
        match self {
            CommitmentProof::Membership(p) => &p.key,
            CommitmentProof::NonMembership(p) => &p.key,
        }
    }
}

impl Canonical for CommitmentProof {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            CommitmentProof::Membership(p) => enc.u8(0).put(p),
            CommitmentProof::NonMembership(p) => enc.u8(1).put(p),
        };
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(CommitmentProof::Membership(dec.get()?)),
            1 => Ok(CommitmentProof::NonMembership(dec.get()?)),
            tag => Err(DecodeError::BadTag { what: "proof kind", tag }),
        }
    }
}

/// True iff `proof` is internally consistent with `root`.
pub fn verify_proof(root: &CommitmentRoot, proof: &CommitmentProof) -> bool {
    match proof {
        CommitmentProof::Membership(p) => p.verifies(root),
        CommitmentProof::NonMembership(p) => p.verifies(root),
    }
}

/// `proof` shows `key` maps to exactly `value` under `root`.
pub fn verify_membership(
    root: &CommitmentRoot,
    key: &StoreKey,
    value: &[u8],
    proof: &CommitmentProof,
) -> bool {
    match proof {
        CommitmentProof::Membership(p) => p.key == *key && p.value == value && p.verifies(root),
        CommitmentProof::NonMembership(_) => false,
    }
}

/// `proof` shows `key` is absent under `root`.
pub fn verify_non_membership(root: &CommitmentRoot, key: &StoreKey, proof: &CommitmentProof) -> bool {
    match proof {
        CommitmentProof::NonMembership(p) => p.key == *key && p.verifies(root),
        CommitmentProof::Membership(_) => false,
    }
}
