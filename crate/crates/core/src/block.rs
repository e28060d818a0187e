//! Simulated consensus: a static Ed25519 signer set and quorum-signed blocks.

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{hash_parts, Canonical, DecodeError, Decoder, Digest, Encoder};
use crate::store::CommitmentRoot;

/// Smallest number of signers strictly greater than two thirds of `n`.
pub fn quorum(n: usize) -> usize {
    2 * n / 3 + 1
}

/// Public keys of a ledger's signers, in index order.
#[derive(Clone, PartialEq, Eq)]
pub struct SignerSet {
    keys: Vec<VerifyingKey>,
}

impl SignerSet {
    pub fn new(keys: Vec<VerifyingKey>) -> Self {
        assert!(!keys.is_empty(), "signer set must be non-empty");
        Self { keys }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[VerifyingKey] {
        &self.keys
    }

    pub fn quorum(&self) -> usize {
        quorum(self.keys.len())
    }

    pub fn digest(&self) -> Digest {
        hash_parts(&[b"signer-set", &self.to_bytes()])
    }
}

impl std::fmt::Debug for SignerSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SignerSet(n={}, {:?})", self.keys.len(), self.digest())
    }
}

impl Canonical for SignerSet {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.keys.len() as u64);
        for k in &self.keys {
            enc.raw(k.as_bytes());
        }
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let n = dec.u64()?;
        if n == 0 || n > 1024 {
            return Err(DecodeError::Invalid(format!("signer count {n}")));
        }
        let keys = (0..n)
            .map(|_| {
                let raw = dec.raw::<32>()?;
                VerifyingKey::from_bytes(&raw).map_err(|_| DecodeError::Invalid("signer key".into()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { keys })
    }
}

/// Private half of a signer set. Key `i` is derived from the ledger seed so
/// runs are reproducible.
#[derive(Clone)]
pub struct SignerKeys {
    keys: Vec<SigningKey>,
}

impl SignerKeys {
    pub fn derive(seed: u64, ledger: &str, count: usize) -> Self {
        assert!(count > 0);
        let keys = (0..count as u64)
            .map(|i| {
                let d = hash_parts(&[b"signer", &seed.to_be_bytes(), ledger.as_bytes(), &i.to_be_bytes()]);
                SigningKey::from_bytes(&d.0)
            })
            .collect();
        Self { keys }
    }

    pub fn public(&self) -> SignerSet {
        SignerSet::new(self.keys.iter().map(SigningKey::verifying_key).collect())
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Signatures from the first `count` signers.
    pub fn sign(&self, header: &BlockHeader, count: usize) -> Vec<BlockSignature> {
        let msg = header.to_bytes();
        self.keys
            .iter()
            .take(count)
            .enumerate()
            .map(|(i, k)| BlockSignature { signer: i as u64, signature: k.sign(&msg).to_bytes() })
            .collect()
    }
}

impl std::fmt::Debug for SignerKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SignerKeys(n={})", self.keys.len())
    }
}

/// The signed part of a block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub timestamp: u64,
    pub app_root: CommitmentRoot,
    pub prev_digest: Digest,
}

impl BlockHeader {
    pub fn digest(&self) -> Digest {
        hash_parts(&[b"block", &self.to_bytes()])
    }
}

impl Canonical for BlockHeader {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.height).u64(self.timestamp).put(&self.app_root).digest(&self.prev_digest);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(BlockHeader {
            height: dec.u64()?,
            timestamp: dec.u64()?,
            app_root: dec.get()?,
            prev_digest: dec.digest()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSignature {
    pub signer: u64,
    pub signature: [u8; 64],
}

impl Canonical for BlockSignature {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.signer).raw(&self.signature);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(BlockSignature { signer: dec.u64()?, signature: dec.raw::<64>()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub signatures: Vec<BlockSignature>,
}

impl Block {
    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn digest(&self) -> Digest {
        self.header.digest()
    }
}

impl Canonical for Block {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.header).list(&self.signatures);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Block { header: dec.get()?, signatures: dec.list()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuorumError {
    #[error("signer indices must be strictly increasing")]
    UnsortedSigners,
    #[error("signer index {0} out of range")]
    UnknownSigner(u64),
    #[error("bad signature from signer {0}")]
    BadSignature(u64),
    #[error("{got} signatures, quorum is {need}")]
    InsufficientQuorum { got: usize, need: usize },
}

/// Checks that more than two thirds of `set` signed `block.header`.
pub fn verify_quorum(set: &SignerSet, block: &Block) -> Result<(), QuorumError> {
    let msg = block.header.to_bytes();
    let mut last: Option<u64> = None;
    for s in &block.signatures {
        if last.is_some_and(|l| s.signer <= l) {
            return Err(QuorumError::UnsortedSigners);
        }
        last = Some(s.signer);
        let key = set.keys.get(s.signer as usize).ok_or(QuorumError::UnknownSigner(s.signer))?;
        key.verify_strict(&msg, &Signature::from_bytes(&s.signature))
            .map_err(|_| QuorumError::BadSignature(s.signer))?;
    }
    let need = set.quorum();
    if block.signatures.len() < need {
        return Err(QuorumError::InsufficientQuorum { got: block.signatures.len(), need });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(h: u64) -> BlockHeader {
        BlockHeader { height: h, timestamp: 10, app_root: CommitmentRoot::empty(), prev_digest: Digest::ZERO }
    }

    #[test]
    fn quorum_thresholds() {
        assert_eq!(quorum(1), 1);
        assert_eq!(quorum(3), 3);
        assert_eq!(quorum(4), 3);
        assert_eq!(quorum(7), 5);
    }

    #[test]
    fn quorum_signed_block_verifies() {
        let keys = SignerKeys::derive(1, "a", 4);
        let set = keys.public();
        let h = header(1);
        let block = Block { signatures: keys.sign(&h, 3), header: h };
        assert_eq!(verify_quorum(&set, &block), Ok(()));
    }

    #[test]
    fn below_quorum_or_foreign_keys_rejected() {
        let keys = SignerKeys::derive(1, "a", 4);
        let other = SignerKeys::derive(1, "b", 4);
        let h = header(1);
        let short = Block { signatures: keys.sign(&h, 2), header: h.clone() };
        assert!(matches!(verify_quorum(&keys.public(), &short), Err(QuorumError::InsufficientQuorum { .. })));
        let foreign = Block { signatures: other.sign(&h, 3), header: h.clone() };
        assert!(matches!(verify_quorum(&keys.public(), &foreign), Err(QuorumError::BadSignature(0))));
        let mut dup = Block { signatures: keys.sign(&h, 3), header: h };
        dup.signatures[1] = dup.signatures[0].clone();
        assert_eq!(verify_quorum(&keys.public(), &dup), Err(QuorumError::UnsortedSigners));
    }

    #[test]
    fn signer_set_roundtrip() {
        let set = SignerKeys::derive(9, "x", 5).public();
        assert_eq!(SignerSet::from_bytes(&set.to_bytes()).unwrap(), set);
    }
}
