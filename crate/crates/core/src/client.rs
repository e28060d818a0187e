//! Light clients: consensus states, headers, misbehaviour evidence and the
//! validity predicate applied to them.
//!
//! A quorum client trusts a signer-set digest and accepts any later block
//! carrying that signer set and a quorum of signatures. A solo client trusts
//! a single public key. A loopback client tracks the host ledger itself and
//! is handled directly by the host.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{verify_quorum, Block, BlockHeader, SignerSet};
use crate::encoding::{Canonical, DecodeError, Decoder, Digest, Encoder};
use crate::ident::ClientId;
use crate::events::EventKind;
use crate::ledger::{HandlerError, Ledger, TxError};
use crate::paths;
use crate::store::{verify_membership, verify_non_membership, CommitmentPrefix, CommitmentProof, CommitmentRoot};

pub const CONSENSUS_STATE_RETENTION: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientType {
    Loopback,
    Solo,
    Quorum,
}

impl ClientType {
    fn tag(self) -> u8 {
        match self {
            ClientType::Loopback => 0,
            ClientType::Solo => 1,
            ClientType::Quorum => 2,
        }
    }
}

impl Canonical for ClientType {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.tag());
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(ClientType::Loopback),
            1 => Ok(ClientType::Solo),
            2 => Ok(ClientType::Quorum),
            tag => Err(DecodeError::BadTag { what: "client type", tag }),
        }
    }
}

/// What a client trusts about its counterparty at one height. The signer
/// material is the signer-set digest (quorum), the public key (solo) or
/// empty (loopback).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusState {
    pub client_type: ClientType,
    pub height: u64,
    pub root: CommitmentRoot,
    pub timestamp: u64,
    #[serde(with = "crate::serde_hex")]
    pub signer: Vec<u8>,
}

impl ConsensusState {
    /// Signer material a client of type `ty` keeps for `set`.
    pub fn signer_material(ty: ClientType, set: &SignerSet) -> Vec<u8> {
        match ty {
            ClientType::Quorum => set.digest().0.to_vec(),
            ClientType::Solo => set.keys()[0].as_bytes().to_vec(),
            ClientType::Loopback => Vec::new(),
        }
    }

    pub fn from_header(ty: ClientType, header: &BlockHeader, set: &SignerSet) -> Self {
        ConsensusState {
            client_type: ty,
            height: header.height,
            root: header.app_root,
            timestamp: header.timestamp,
            signer: Self::signer_material(ty, set),
        }
    }

    fn well_formed(&self) -> bool {
        match self.client_type {
            ClientType::Quorum | ClientType::Solo => self.signer.len() == 32,
            ClientType::Loopback => self.signer.is_empty(),
        }
    }

    /// `set` is the signer set this state trusts.
    pub fn trusts(&self, set: &SignerSet) -> bool {
        match self.client_type {
            ClientType::Quorum => self.signer == set.digest().0,
            ClientType::Solo => set.len() == 1 && self.signer == set.keys()[0].as_bytes(),
            ClientType::Loopback => false,
        }
    }
}

impl Canonical for ConsensusState {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.client_type)
            .u64(self.height)
            .put(&self.root)
            .u64(self.timestamp)
            .bytes(&self.signer);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(ConsensusState {
            client_type: dec.get()?,
            height: dec.u64()?,
            root: dec.get()?,
            timestamp: dec.u64()?,
            signer: dec.bytes()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientState {
    pub client_type: ClientType,
    pub latest_height: u64,
    /// 0 while not frozen.
    pub frozen_height: u64,
    pub trusting_period: u64,
}

impl ClientState {
    pub fn is_frozen(&self) -> bool {
        self.frozen_height != 0
    }

    /// Heights at or above the freeze height are no longer trusted.
    pub fn trusted_at(&self, height: u64) -> bool {
        !self.is_frozen() || height < self.frozen_height
    }
}

impl Canonical for ClientState {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.client_type)
            .u64(self.latest_height)
            .u64(self.frozen_height)
            .u64(self.trusting_period);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(ClientState {
            client_type: dec.get()?,
            latest_height: dec.u64()?,
            frozen_height: dec.u64()?,
            trusting_period: dec.u64()?,
        })
    }
}

/// A signed block plus the signer set that signed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub block: Block,
    pub signers: SignerSet,
}

impl Header {
    pub fn height(&self) -> u64 {
        self.block.header.height
    }

    pub fn timestamp(&self) -> u64 {
        self.block.header.timestamp
    }

    pub fn digest(&self) -> Digest {
        self.block.digest()
    }
}

impl Canonical for Header {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.block).put(&self.signers);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Header { block: dec.get()?, signers: dec.get()? })
    }
}

/// Two validly signed headers at the same height with different contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Misbehaviour {
    pub header_a: Header,
    pub header_b: Header,
}

impl Canonical for Misbehaviour {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.header_a).put(&self.header_b);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Misbehaviour { header_a: dec.get()?, header_b: dec.get()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("client {0} already exists")]
    IdentifierInUse(ClientId),
    #[error("no client {0}")]
    NoSuchClient(ClientId),
    #[error("malformed client state: {0}")]
    MalformedState(String),
    #[error("client {client} frozen at height {height}")]
    Frozen { client: ClientId, height: u64 },
    #[error("header height {header} not above latest {latest}")]
    StaleHeader { header: u64, latest: u64 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("trusting period elapsed: header time {header_time}, trusted time {trusted_time}, period {period}")]
    Expired { header_time: u64, trusted_time: u64, period: u64 },
    #[error("not misbehaviour: {0}")]
    NotMisbehaviour(String),
    #[error("client {client} has no consensus state at height {height}")]
    NoConsensusState { client: ClientId, height: u64 },
    #[error("operation not supported by {0:?} clients")]
    Unsupported(ClientType),
}

pub fn validate_initial(state: &ClientState, consensus: &ConsensusState) -> Result<(), ClientError> {
    if state.client_type != consensus.client_type {
        return Err(ClientError::MalformedState("client and consensus state types differ".into()));
    }
    if state.is_frozen() {
        return Err(ClientError::MalformedState("new client cannot be frozen".into()));
    }
    if state.client_type != ClientType::Loopback && state.latest_height != consensus.height {
        return Err(ClientError::MalformedState("latest height must match consensus height".into()));
    }
    if state.trusting_period == 0 {
        return Err(ClientError::MalformedState("zero trusting period".into()));
    }
    if !consensus.well_formed() {
        return Err(ClientError::MalformedState("signer material does not match client type".into()));
    }
    Ok(())
}

fn check_signed(trusted: &ConsensusState, header: &Header) -> Result<(), String> {
    if !trusted.trusts(&header.signers) {
        return Err("signer set not trusted".into());
    }
    verify_quorum(&header.signers, &header.block).map_err(|e| e.to_string())
}

/// Validity predicate for an update. `trusted` is the consensus state at the
/// client's latest height. Returns the consensus state to store.
pub fn check_header(
    state: &ClientState,
    trusted: &ConsensusState,
    header: &Header,
) -> Result<ConsensusState, ClientError> {
    if state.client_type == ClientType::Loopback {
        return Err(ClientError::Unsupported(ClientType::Loopback));
    }
    if header.height() <= state.latest_height {
        return Err(ClientError::StaleHeader { header: header.height(), latest: state.latest_height });
    }
    check_signed(trusted, header).map_err(ClientError::InvalidHeader)?;
    if header.timestamp() < trusted.timestamp {
        return Err(ClientError::InvalidHeader("timestamp decreased".into()));
    }
    if header.timestamp() - trusted.timestamp > state.trusting_period {
        return Err(ClientError::Expired {
            header_time: header.timestamp(),
            trusted_time: trusted.timestamp,
            period: state.trusting_period,
        });
    }
    Ok(ConsensusState::from_header(state.client_type, &header.block.header, &header.signers))
}

/// Returns the height the client must be frozen at.
pub fn check_misbehaviour(
    state: &ClientState,
    trusted: &ConsensusState,
    evidence: &Misbehaviour,
) -> Result<u64, ClientError> {
    if state.client_type == ClientType::Loopback {
        return Err(ClientError::Unsupported(ClientType::Loopback));
    }
    let (a, b) = (&evidence.header_a, &evidence.header_b);
    if a.height() != b.height() {
        return Err(ClientError::NotMisbehaviour("heights differ".into()));
    }
    if a.digest() == b.digest() {
        return Err(ClientError::NotMisbehaviour("headers identical".into()));
    }
    check_signed(trusted, a).map_err(|e| ClientError::NotMisbehaviour(format!("first header: {e}")))?;
    check_signed(trusted, b).map_err(|e| ClientError::NotMisbehaviour(format!("second header: {e}")))?;
    Ok(a.height())
}

// ---- host handlers ----

fn heights_key(client: &ClientId) -> String {
    format!("host/clients/{client}/heights")
}

impl Ledger {
    pub fn client_state(&self, client: &ClientId) -> Result<ClientState, HandlerError> {
        self.read(&paths::client_state(client))?
            .ok_or_else(|| ClientError::NoSuchClient(client.clone()).into())
    }

    pub fn client_consensus_state(
        &self,
        client: &ClientId,
        height: u64,
    ) -> Result<Option<ConsensusState>, HandlerError> {
        self.read(&paths::consensus_state(client, height))
    }

    /// Heights with a stored consensus state, ascending.
    pub fn client_consensus_heights(&self, client: &ClientId) -> Vec<u64> {
        self.private
            .get(&heights_key(client))
            .map(|b| b.chunks_exact(8).map(|c| u64::from_be_bytes(c.try_into().expect("8 bytes"))).collect())
            .unwrap_or_default()
    }

    fn set_consensus_heights(&mut self, client: &ClientId, heights: &[u64]) {
        let bytes = heights.iter().flat_map(|h| h.to_be_bytes()).collect();
        self.private.set(heights_key(client), bytes);
    }

    fn store_consensus_state(&mut self, client: &ClientId, cs: &ConsensusState) -> Result<(), HandlerError> {
        self.write(&paths::consensus_state(client, cs.height), cs)?;
        let mut heights = self.client_consensus_heights(client);
        if let Err(i) = heights.binary_search(&cs.height) {
            heights.insert(i, cs.height);
        }
        while heights.len() > CONSENSUS_STATE_RETENTION {
            let old = heights.remove(0);
            self.remove(&paths::consensus_state(client, old));
        }
        self.set_consensus_heights(client, &heights);
        Ok(())
    }

    /// Latest height the client can vouch for. Loopback clients follow the
    /// host itself.
    pub fn client_latest_height(&self, client: &ClientId) -> Result<u64, HandlerError> {
        let st = self.client_state(client)?;
        Ok(match st.client_type {
            ClientType::Loopback => self.height(),
            _ => st.latest_height,
        })
    }

    pub fn create_client(
        &mut self,
        client: &ClientId,
        state: ClientState,
        consensus: ConsensusState,
    ) -> Result<(), HandlerError> {
        if self.read_raw(&paths::client_state(client)).is_some() {
            return Err(ClientError::IdentifierInUse(client.clone()).into());
        }
        validate_initial(&state, &consensus)?;
        self.write(&paths::client_state(client), &state)?;
        if state.client_type != ClientType::Loopback {
            self.store_consensus_state(client, &consensus)?;
        }
        self.emit(EventKind::CreateClient { client: client.clone() });
        Ok(())
    }

    fn latest_trusted(&self, client: &ClientId, st: &ClientState) -> Result<ConsensusState, HandlerError> {
        self.client_consensus_state(client, st.latest_height)?.ok_or_else(|| {
            ClientError::NoConsensusState { client: client.clone(), height: st.latest_height }.into()
        })
    }

    pub fn update_client(&mut self, client: &ClientId, header: &Header) -> Result<(), HandlerError> {
        let mut st = self.client_state(client)?;
        if st.is_frozen() {
            return Err(ClientError::Frozen { client: client.clone(), height: st.frozen_height }.into());
        }
        let trusted = self.latest_trusted(client, &st)?;
        let cs = check_header(&st, &trusted, header)?;
        st.latest_height = cs.height;
        self.write(&paths::client_state(client), &st)?;
        self.store_consensus_state(client, &cs)?;
        self.emit(EventKind::UpdateClient { client: client.clone(), height: cs.height });
        Ok(())
    }

    pub fn submit_misbehaviour(&mut self, client: &ClientId, evidence: &Misbehaviour) -> Result<(), HandlerError> {
        let mut st = self.client_state(client)?;
        if st.is_frozen() {
            return Err(ClientError::Frozen { client: client.clone(), height: st.frozen_height }.into());
        }
        let trusted = self.latest_trusted(client, &st)?;
        let height = check_misbehaviour(&st, &trusted, evidence)?;
        st.frozen_height = height.max(1);
        self.write(&paths::client_state(client), &st)?;
        self.emit(EventKind::ClientFrozen { client: client.clone(), height: st.frozen_height });
        Ok(())
    }

    /// Operator override, not reachable from any datagram: lifts a freeze.
    pub fn unfreeze_client(&mut self, client: &ClientId) -> Result<(), TxError> {
        self.atomically(|l| {
            let mut st = l.client_state(client).map_err(|reason| TxError::Aborted { index: 0, reason })?;
            st.frozen_height = 0;
            l.write(&paths::client_state(client), &st).map_err(|reason| TxError::Aborted { index: 0, reason })
        })
    }

    /// Root the client trusts at `height`, or `None` for loopback clients.
    fn trusted_root(&self, client: &ClientId, height: u64) -> Result<Option<ConsensusState>, HandlerError> {
        let st = self.client_state(client)?;
        if !st.trusted_at(height) {
            return Err(ClientError::Frozen { client: client.clone(), height: st.frozen_height }.into());
        }
        if st.client_type == ClientType::Loopback {
            if height > self.height() {
                return Err(ClientError::NoConsensusState { client: client.clone(), height }.into());
            }
            return Ok(None);
        }
        match self.client_consensus_state(client, height)? {
            Some(cs) => Ok(Some(cs)),
            None => Err(ClientError::NoConsensusState { client: client.clone(), height }.into()),
        }
    }

    /// Timestamp of the counterparty block at `height` as seen by the client.
    pub fn client_timestamp_at(&self, client: &ClientId, height: u64) -> Result<u64, HandlerError> {
        match self.trusted_root(client, height)? {
            Some(cs) => Ok(cs.timestamp),
            None => Ok(self.block_at(height).map_err(|_| ClientError::NoConsensusState {
                client: client.clone(),
                height,
            })?.header.timestamp),
        }
    }

    /// `prefix/path` maps to `value` on the counterparty at `height`.
    pub fn verify_membership(
        &self,
        client: &ClientId,
        height: u64,
        prefix: &CommitmentPrefix,
        path: &str,
        value: &[u8],
        proof: &CommitmentProof,
    ) -> Result<bool, HandlerError> {
        let Ok(key) = prefix.apply(path) else { return Ok(false) };
        Ok(match self.trusted_root(client, height)? {
            Some(cs) => verify_membership(&cs.root, &key, value, proof),
            None => self.store.get(&key).as_deref() == Some(value),
        })
    }

    /// `prefix/path` is absent on the counterparty at `height`.
    pub fn verify_non_membership(
        &self,
        client: &ClientId,
        height: u64,
        prefix: &CommitmentPrefix,
        path: &str,
        proof: &CommitmentProof,
    ) -> Result<bool, HandlerError> {
        let Ok(key) = prefix.apply(path) else { return Ok(false) };
        Ok(match self.trusted_root(client, height)? {
            Some(cs) => verify_non_membership(&cs.root, &key, proof),
            None => self.store.get(&key).is_none(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::SignerKeys;
    use crate::encoding::Digest;

    fn signed(keys: &SignerKeys, height: u64, ts: u64, root: CommitmentRoot, n: usize) -> Header {
        let header = BlockHeader { height, timestamp: ts, app_root: root, prev_digest: Digest::ZERO };
        Header { block: Block { signatures: keys.sign(&header, n), header }, signers: keys.public() }
    }

    fn genesis(keys: &SignerKeys, ty: ClientType) -> (ClientState, ConsensusState) {
        let h = signed(keys, 0, 100, CommitmentRoot::empty(), keys.len());
        let cs = ConsensusState::from_header(ty, &h.block.header, &h.signers);
        (ClientState { client_type: ty, latest_height: 0, frozen_height: 0, trusting_period: 50 }, cs)
    }

    #[test]
    fn quorum_update_rules() {
        let keys = SignerKeys::derive(3, "b", 4);
        let (st, cs) = genesis(&keys, ClientType::Quorum);
        validate_initial(&st, &cs).unwrap();
        let ok = signed(&keys, 5, 110, CommitmentRoot::empty(), 3);
        assert_eq!(check_header(&st, &cs, &ok).unwrap().height, 5);
        let weak = signed(&keys, 5, 110, CommitmentRoot::empty(), 2);
        assert!(matches!(check_header(&st, &cs, &weak), Err(ClientError::InvalidHeader(_))));
        let stale = signed(&keys, 0, 110, CommitmentRoot::empty(), 3);
        assert!(matches!(check_header(&st, &cs, &stale), Err(ClientError::StaleHeader { .. })));
        let late = signed(&keys, 6, 151, CommitmentRoot::empty(), 3);
        assert!(matches!(check_header(&st, &cs, &late), Err(ClientError::Expired { .. })));
        let back = signed(&keys, 6, 99, CommitmentRoot::empty(), 3);
        assert!(matches!(check_header(&st, &cs, &back), Err(ClientError::InvalidHeader(_))));
    }

    #[test]
    fn foreign_signer_set_rejected() {
        let keys = SignerKeys::derive(3, "b", 4);
        let impostor = SignerKeys::derive(3, "c", 4);
        let (st, cs) = genesis(&keys, ClientType::Quorum);
        let h = signed(&impostor, 1, 101, CommitmentRoot::empty(), 4);
        assert!(matches!(check_header(&st, &cs, &h), Err(ClientError::InvalidHeader(_))));
    }

    #[test]
    fn solo_client_trusts_one_key() {
        let keys = SignerKeys::derive(3, "solo", 1);
        let (st, cs) = genesis(&keys, ClientType::Solo);
        validate_initial(&st, &cs).unwrap();
        assert_eq!(cs.signer, keys.public().keys()[0].as_bytes());
        let h = signed(&keys, 1, 101, CommitmentRoot::empty(), 1);
        assert!(check_header(&st, &cs, &h).is_ok());
        let other = SignerKeys::derive(4, "solo", 1);
        let forged = signed(&other, 1, 101, CommitmentRoot::empty(), 1);
        assert!(check_header(&st, &cs, &forged).is_err());
    }

    #[test]
    fn misbehaviour_requires_two_valid_distinct_headers() {
        let keys = SignerKeys::derive(3, "b", 4);
        let (st, cs) = genesis(&keys, ClientType::Quorum);
        let a = signed(&keys, 7, 107, CommitmentRoot::empty(), 3);
        let b = signed(&keys, 7, 107, CommitmentRoot(crate::encoding::sha256(b"fork")), 3);
        let m = Misbehaviour { header_a: a.clone(), header_b: b.clone() };
        assert_eq!(check_misbehaviour(&st, &cs, &m), Ok(7));
        let same = Misbehaviour { header_a: a.clone(), header_b: a.clone() };
        assert!(matches!(check_misbehaviour(&st, &cs, &same), Err(ClientError::NotMisbehaviour(_))));
        let mut forged = b;
        forged.block.signatures.truncate(2);
        let bad = Misbehaviour { header_a: a, header_b: forged };
        assert!(matches!(check_misbehaviour(&st, &cs, &bad), Err(ClientError::NotMisbehaviour(_))));
    }

    #[test]
    fn consensus_state_layout() {
        let cs = ConsensusState {
            client_type: ClientType::Quorum,
            height: 2,
            root: CommitmentRoot(Digest([7; 32])),
            timestamp: 9,
            signer: vec![1; 32],
        };
        let bytes = cs.to_bytes();
        assert_eq!(bytes[0], 2);
        assert_eq!(&bytes[1..9], &2u64.to_be_bytes());
        assert_eq!(&bytes[9..41], &[7; 32]);
        assert_eq!(&bytes[41..49], &9u64.to_be_bytes());
        assert_eq!(&bytes[49..53], &32u32.to_be_bytes());
        assert_eq!(ConsensusState::from_bytes(&bytes).unwrap(), cs);
    }
}
