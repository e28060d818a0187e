use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

use super::StoreError;

pub const MAX_KEY_LEN: usize = 512;

/// Slash-separated store path. Segments are non-empty and the whole path is at
/// most 512 bytes.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StoreKey(String);

impl StoreKey {
    pub fn new(path: impl Into<String>) -> Result<Self, StoreError> {
        let path = path.into();
        validate_path(&path)?;
        Ok(Self(path))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }

    pub fn starts_with(&self, prefix: &str) -> bool {
        self.0.starts_with(prefix)
    }
}

fn validate_path(path: &str) -> Result<(), StoreError> {
    if path.is_empty() {
        return Err(StoreError::InvalidKey("empty path".into()));
    }
    if path.len() > MAX_KEY_LEN {
        return Err(StoreError::InvalidKey(format!(
            "path is {} bytes, limit {MAX_KEY_LEN}",
            path.len()
        )));
    }
    if path.split('/').any(str::is_empty) {
        return Err(StoreError::InvalidKey(format!("empty segment in {path:?}")));
    }
    Ok(())
}

impl fmt::Display for StoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for StoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl TryFrom<String> for StoreKey {
    type Error = StoreError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        StoreKey::new(s)
    }
}

impl TryFrom<&str> for StoreKey {
    type Error = StoreError;
    fn try_from(s: &str) -> Result<Self, Self::Error> {
        StoreKey::new(s)
    }
}

impl From<StoreKey> for String {
    fn from(k: StoreKey) -> String {
        k.0
    }
}

impl Canonical for StoreKey {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let s = dec.string()?;
        StoreKey::new(s).map_err(|e| DecodeError::Invalid(e.to_string()))
    }
}

/// Path prepended (with a separating '/') to every key of a ledger's
/// inter-ledger sub-store. Verifier and prover must agree on it byte-for-byte.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CommitmentPrefix(String);

impl CommitmentPrefix {
    pub fn new(prefix: impl Into<String>) -> Result<Self, StoreError> {
        let prefix = prefix.into();
        validate_path(&prefix)?;
        Ok(Self(prefix))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Full store key for `path` under this prefix.
    pub fn apply(&self, path: &str) -> Result<StoreKey, StoreError> {
        StoreKey::new(format!("{}/{}", self.0, path))
    }
}

impl Default for CommitmentPrefix {
    fn default() -> Self {
        Self("ibc".to_string())
    }
}

impl fmt::Display for CommitmentPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for CommitmentPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl TryFrom<String> for CommitmentPrefix {
    type Error = StoreError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        CommitmentPrefix::new(s)
    }
}

impl From<CommitmentPrefix> for String {
    fn from(p: CommitmentPrefix) -> String {
        p.0
    }
}

impl Canonical for CommitmentPrefix {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let s = dec.string()?;
        CommitmentPrefix::new(s).map_err(|e| DecodeError::Invalid(e.to_string()))
    }
}
