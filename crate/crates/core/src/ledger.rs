//! Simulated host ledger: provable sub-store, private module state, port and
//! capability system, atomic transactions, quorum-signed blocks and an event
//! log.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::block::{Block, BlockHeader, SignerKeys, SignerSet};
use crate::channel::{ChannelError, Packet};
use crate::client::{ClientError, ClientType, ConsensusState, Header, Misbehaviour};
use crate::connection::ConnectionError;
use crate::encoding::{hash_parts, Canonical, DecodeError, Digest};
use crate::events::{Event, EventKind};
use crate::ident::{ChannelId, LedgerId, PortId};
use crate::router::Module;
use crate::store::{CommitmentPrefix, CommitmentProof, CommitmentRoot, ProvableStore, StoreError, StoreKey};

pub const BLOCK_RETENTION: usize = 256;
pub const DEFAULT_GENESIS_TIME: u64 = 1_700_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerConfig {
    pub id: LedgerId,
    pub signer_count: usize,
    /// Seconds added to the clock per block.
    pub block_time: u64,
    pub genesis_time: u64,
    pub seed: u64,
    pub prefix: CommitmentPrefix,
}

impl LedgerConfig {
    pub fn new(id: LedgerId) -> Self {
        Self {
            id,
            signer_count: 4,
            block_time: 1,
            genesis_time: DEFAULT_GENESIS_TIME,
            seed: 0,
            prefix: CommitmentPrefix::default(),
        }
    }

    pub fn with_signers(mut self, n: usize) -> Self {
        self.signer_count = n;
        self
    }

    pub fn with_block_time(mut self, secs: u64) -> Self {
        self.block_time = secs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Unforgeable 32-byte token. Authentication is byte equality against the
/// value the host minted.
#[derive(Clone, PartialEq, Eq)]
pub struct Capability([u8; 32]);

impl Capability {
    /// For tests that try to forge a capability.
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Capability(bytes)
    }

    pub(crate) fn token(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Capability(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PortError {
    #[error("port {0} already bound")]
    PortAlreadyBound(PortId),
    #[error("port {0} not bound")]
    NotBound(PortId),
    #[error("capability does not authenticate {0}")]
    Unauthorized(String),
}

/// Any reason a handler aborts its transaction.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HandlerError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Connection(#[from] ConnectionError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Port(#[from] PortError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("no module routed for port {0}")]
    UnknownPort(PortId),
    #[error("module error: {0}")]
    Module(String),
    #[error("corrupt stored value at {path}: {source}")]
    Corrupt { path: String, source: DecodeError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("ledger is halted")]
pub struct LedgerHalted;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxError {
    #[error(transparent)]
    Halted(#[from] LedgerHalted),
    #[error("datagram {index} aborted: {reason}")]
    Aborted { index: usize, reason: HandlerError },
}

impl TxError {
    pub fn reason(&self) -> Option<&HandlerError> {
        match self {
            TxError::Halted(_) => None,
            TxError::Aborted { reason, .. } => Some(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("height {0} pruned")]
    HeightPruned(u64),
    #[error("height {0} not yet produced")]
    FutureHeight(u64),
    #[error("corrupt stored value at {path}: {source}")]
    Corrupt { path: String, source: DecodeError },
}

impl From<StoreError> for QueryError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::HeightPruned(h) => QueryError::HeightPruned(h),
            StoreError::FutureHeight(h) => QueryError::FutureHeight(h),
            other => unreachable!("query on valid key failed: {other}"),
        }
    }
}

/// Module and host state that is not part of the commitment root. Supports
/// the same transaction overlay as the provable store.
#[derive(Debug, Clone, Default)]
pub struct PrivateStore {
    data: BTreeMap<String, Vec<u8>>,
    tx: Option<BTreeMap<String, Option<Vec<u8>>>>,
}

impl PrivateStore {
    pub fn get(&self, key: &str) -> Option<Vec<u8>> {
        if let Some(v) = self.tx.as_ref().and_then(|tx| tx.get(key)) {
            return v.clone();
        }
        self.data.get(key).cloned()
    }

    pub fn set(&mut self, key: String, value: Vec<u8>) {
        match &mut self.tx {
            Some(tx) => {
                tx.insert(key, Some(value));
            }
            None => {
                self.data.insert(key, value);
            }
        }
    }

    pub fn delete(&mut self, key: &str) {
        match &mut self.tx {
            Some(tx) => {
                tx.insert(key.to_string(), None);
            }
            None => {
                self.data.remove(key);
            }
        }
    }

    /// Live keys under `prefix`, in order.
    pub fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        let mut keys: BTreeMap<&str, bool> = self
            .data
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, _)| (k.as_str(), true))
            .collect();
        if let Some(tx) = &self.tx {
            for (k, v) in tx.iter().filter(|(k, _)| k.starts_with(prefix)) {
                keys.insert(k.as_str(), v.is_some());
            }
        }
        keys.into_iter().filter(|(_, live)| *live).map(|(k, _)| k.to_string()).collect()
    }

    fn begin(&mut self) {
        assert!(self.tx.is_none());
        self.tx = Some(BTreeMap::new());
    }

    fn commit(&mut self) {
        for (k, v) in self.tx.take().expect("open transaction") {
            match v {
                Some(v) => self.data.insert(k, v),
                None => self.data.remove(&k),
            };
        }
    }

    fn abort(&mut self) {
        self.tx = None;
    }
}

pub(crate) type PacketKey = (PortId, ChannelId, u64);

#[derive(Clone)]
pub struct Ledger {
    pub(crate) config: Arc<LedgerConfig>,
    keys: Arc<SignerKeys>,
    signers: SignerSet,
    pub(crate) store: ProvableStore,
    pub(crate) private: PrivateStore,
    blocks: VecDeque<Block>,
    events: Vec<Event>,
    pending_events: Vec<Event>,
    tx_events: Vec<Event>,
    pub(crate) modules: BTreeMap<PortId, Arc<dyn Module>>,
    sent_packets: BTreeMap<PacketKey, Packet>,
    written_acks: BTreeMap<PacketKey, Vec<u8>>,
    halted: bool,
    clock_skip: u64,
    equivocate_next: bool,
    equivocations: Vec<Misbehaviour>,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger")
            .field("id", &self.config.id)
            .field("height", &self.height())
            .field("halted", &self.halted)
            .finish_non_exhaustive()
    }
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Self {
        let keys = SignerKeys::derive(config.seed, config.id.as_str(), config.signer_count);
        let signers = keys.public();
        let genesis = BlockHeader {
            height: 0,
            timestamp: config.genesis_time,
            app_root: CommitmentRoot::empty(),
            prev_digest: Digest::ZERO,
        };
        let genesis = Block { signatures: keys.sign(&genesis, signers.quorum()), header: genesis };
        Ledger {
            config: Arc::new(config),
            keys: Arc::new(keys),
            signers,
            store: ProvableStore::new(),
            private: PrivateStore::default(),
            blocks: VecDeque::from([genesis]),
            events: Vec::new(),
            pending_events: Vec::new(),
            tx_events: Vec::new(),
            modules: BTreeMap::new(),
            sent_packets: BTreeMap::new(),
            written_acks: BTreeMap::new(),
            halted: false,
            clock_skip: 0,
            equivocate_next: false,
            equivocations: Vec::new(),
        }
    }

    pub fn id(&self) -> &LedgerId {
        &self.config.id
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn prefix(&self) -> &CommitmentPrefix {
        &self.config.prefix
    }

    pub fn signer_set(&self) -> &SignerSet {
        &self.signers
    }

    /// Client type counterparties use to track this ledger.
    pub fn self_client_type(&self) -> ClientType {
        if self.signers.len() == 1 {
            ClientType::Solo
        } else {
            ClientType::Quorum
        }
    }

    /// Height of the latest produced block.
    pub fn height(&self) -> u64 {
        self.tip_block().header.height
    }

    pub fn tip_block(&self) -> &Block {
        self.blocks.back().expect("genesis retained")
    }

    /// Timestamp of the latest produced block.
    pub fn timestamp(&self) -> u64 {
        self.tip_block().header.timestamp
    }

    pub fn block_at(&self, height: u64) -> Result<&Block, QueryError> {
        let first = self.blocks.front().expect("genesis retained").header.height;
        if height > self.height() {
            return Err(QueryError::FutureHeight(height));
        }
        if height < first {
            return Err(QueryError::HeightPruned(height));
        }
        Ok(&self.blocks[(height - first) as usize])
    }

    pub fn header_at(&self, height: u64) -> Result<Header, QueryError> {
        Ok(Header { block: self.block_at(height)?.clone(), signers: self.signers.clone() })
    }

    pub fn query_consensus_state_at(&self, height: u64) -> Result<ConsensusState, QueryError> {
        let block = self.block_at(height)?;
        Ok(ConsensusState::from_header(self.self_client_type(), &block.header, &self.signers))
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn halt(&mut self) {
        self.halted = true;
    }

    pub fn resume(&mut self) {
        self.halted = false;
    }

    /// Adds wall-clock time that passes without a block, e.g. while halted.
    pub fn advance_clock(&mut self, secs: u64) {
        self.clock_skip += secs;
    }

    /// The next produced block is accompanied by a conflicting quorum-signed
    /// block at the same height.
    pub fn schedule_equivocation(&mut self) {
        self.equivocate_next = true;
    }

    /// Evidence of this ledger's own equivocations.
    pub fn equivocations(&self) -> &[Misbehaviour] {
        &self.equivocations
    }

    pub fn produce_block(&mut self) -> Result<&Block, LedgerHalted> {
        if self.halted {
            return Err(LedgerHalted);
        }
        let skip = std::mem::take(&mut self.clock_skip);
        let prev = self.tip_block();
        let header = BlockHeader {
            height: prev.header.height + 1,
            timestamp: prev.header.timestamp + self.config.block_time + skip,
            app_root: CommitmentRoot::empty(),
            prev_digest: prev.digest(),
        };
        let root = self.store.commit();
        debug_assert_eq!(self.store.latest_height(), header.height);
        let header = BlockHeader { app_root: root, ..header };
        let quorum = self.signers.quorum();
        let block = Block { signatures: self.keys.sign(&header, quorum), header };
        if std::mem::take(&mut self.equivocate_next) {
            let forged = BlockHeader {
                app_root: CommitmentRoot(hash_parts(&[b"fork", &root.0 .0])),
                ..block.header.clone()
            };
            let forged = Block { signatures: self.keys.sign(&forged, quorum), header: forged };
            self.equivocations.push(Misbehaviour {
                header_a: Header { block: block.clone(), signers: self.signers.clone() },
                header_b: Header { block: forged, signers: self.signers.clone() },
            });
        }
        self.blocks.push_back(block);
        while self.blocks.len() > BLOCK_RETENTION {
            self.blocks.pop_front();
        }
        self.events.append(&mut self.pending_events);
        Ok(self.tip_block())
    }

    /// Runs `f` as one transaction: every store, private-state and event
    /// change it makes is kept iff it returns `Ok`.
    pub fn atomically<T, E: From<LedgerHalted>>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, E>,
    ) -> Result<T, E> {
        if self.halted {
            return Err(LedgerHalted.into());
        }
        assert!(!self.store.in_tx(), "nested transaction");
        self.store.begin_tx();
        self.private.begin();
        self.tx_events.clear();
        match f(self) {
            Ok(v) => {
                self.store.commit_tx();
                self.private.commit();
                for ev in std::mem::take(&mut self.tx_events) {
                    self.index_event(&ev);
                    self.pending_events.push(ev);
                }
                Ok(v)
            }
            Err(e) => {
                self.store.abort_tx();
                self.private.abort();
                self.tx_events.clear();
                Err(e)
            }
        }
    }

    fn index_event(&mut self, ev: &Event) {
        match &ev.kind {
            EventKind::SendPacket { packet } => {
                self.sent_packets.insert(packet.source_key(), packet.clone());
            }
            EventKind::WriteAck { packet, ack } => {
                self.written_acks.insert(packet.dest_key(), ack.clone());
            }
            _ => {}
        }
    }

    pub(crate) fn emit(&mut self, kind: EventKind) {
        debug_assert!(self.store.in_tx(), "events are emitted inside transactions");
        self.tx_events.push(Event { height: self.height() + 1, kind });
    }

    /// Events from produced blocks.
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Events of committed transactions not yet in a block.
    pub fn pending_events(&self) -> &[Event] {
        &self.pending_events
    }

    /// Packet data for a send made on this ledger, kept for relayers.
    pub fn sent_packet(&self, port: &PortId, chan: &ChannelId, seq: u64) -> Option<&Packet> {
        self.sent_packets.get(&(port.clone(), chan.clone(), seq))
    }

    /// Acknowledgement bytes written by a receive on this ledger.
    pub fn written_ack(&self, port: &PortId, chan: &ChannelId, seq: u64) -> Option<&[u8]> {
        self.written_acks.get(&(port.clone(), chan.clone(), seq)).map(Vec::as_slice)
    }

    // ---- provable store access ----

    pub(crate) fn key(&self, path: &str) -> StoreKey {
        self.config.prefix.apply(path).expect("well-formed store path")
    }

    pub(crate) fn read<T: Canonical>(&self, path: &str) -> Result<Option<T>, HandlerError> {
        match self.store.get(&self.key(path)) {
            None => Ok(None),
            Some(bytes) => T::from_bytes(&bytes)
                .map(Some)
                .map_err(|source| HandlerError::Corrupt { path: path.to_string(), source }),
        }
    }

    pub(crate) fn read_raw(&self, path: &str) -> Option<Vec<u8>> {
        self.store.get(&self.key(path))
    }

    pub(crate) fn write<T: Canonical>(&mut self, path: &str, value: &T) -> Result<(), HandlerError> {
        self.write_raw(path, value.to_bytes())
    }

    pub(crate) fn write_raw(&mut self, path: &str, value: Vec<u8>) -> Result<(), HandlerError> {
        let key = self.key(path);
        self.store.set(&key, value)?;
        Ok(())
    }

    pub(crate) fn remove(&mut self, path: &str) {
        let key = self.key(path);
        self.store.delete(&key);
    }

    /// Working-state paths (prefix stripped) starting with `path_prefix`.
    pub(crate) fn paths_with_prefix(&self, path_prefix: &str) -> Vec<String> {
        let full = format!("{}/{}", self.config.prefix, path_prefix);
        let strip = self.config.prefix.as_str().len() + 1;
        self.store
            .working_keys_with_prefix(&full)
            .into_iter()
            .map(|k| k.as_str()[strip..].to_string())
            .collect()
    }

    /// Raw committed value at `height`.
    pub fn query_raw(&self, height: u64, path: &str) -> Result<Option<Vec<u8>>, QueryError> {
        Ok(self.store.get_at(height, &self.key(path))?)
    }

    pub fn query<T: Canonical>(&self, height: u64, path: &str) -> Result<Option<T>, QueryError> {
        match self.query_raw(height, path)? {
            None => Ok(None),
            Some(bytes) => T::from_bytes(&bytes)
                .map(Some)
                .map_err(|source| QueryError::Corrupt { path: path.to_string(), source }),
        }
    }

    /// Membership proof if `path` is set at `height`, absence proof otherwise.
    pub fn prove(&self, height: u64, path: &str) -> Result<CommitmentProof, QueryError> {
        let key = self.key(path);
        let snap = self.store.snapshot(height)?;
        Ok(snap
            .prove_membership(&key)
            .or_else(|| snap.prove_non_membership(&key))
            .expect("key is either present or absent"))
    }

    /// Committed (path, value) pairs under `path_prefix` at `height`.
    pub fn query_prefix(&self, height: u64, path_prefix: &str) -> Result<Vec<(String, Vec<u8>)>, QueryError> {
        let full = format!("{}/{}", self.config.prefix, path_prefix);
        let strip = self.config.prefix.as_str().len() + 1;
        let snap = self.store.snapshot(height)?;
        Ok(snap.range_prefix(&full).map(|(k, v)| (k.as_str()[strip..].to_string(), v.to_vec())).collect())
    }

    pub fn root_at(&self, height: u64) -> Result<CommitmentRoot, QueryError> {
        Ok(self.store.root_at(height)?)
    }

    /// Current working-state value, including uncommitted writes.
    pub fn get_working(&self, path: &str) -> Option<Vec<u8>> {
        self.read_raw(path)
    }

    // ---- capabilities and ports ----

    fn cap_secret(&self) -> Digest {
        hash_parts(&[b"capability-secret", &self.config.seed.to_be_bytes(), self.config.id.as_str().as_bytes()])
    }

    /// Mints a fresh capability for `path`, replacing any previous one.
    pub(crate) fn new_capability(&mut self, path: &str) -> Capability {
        let counter_key = "host/capability-counter";
        let n = self.private.get(counter_key).map_or(0, |b| u64::from_bytes(&b).expect("counter"));
        self.private.set(counter_key.to_string(), (n + 1).to_bytes());
        let token = hash_parts(&[&self.cap_secret().0, &n.to_be_bytes()]).0;
        self.private.set(format!("host/caps/{path}"), token.to_vec());
        Capability(token)
    }

    pub(crate) fn authenticate(&self, path: &str, cap: &Capability) -> bool {
        self.private.get(&format!("host/caps/{path}")).is_some_and(|t| t == cap.0)
    }

    pub(crate) fn require_capability(&self, path: &str, cap: &Capability) -> Result<(), PortError> {
        if self.authenticate(path, cap) {
            Ok(())
        } else {
            Err(PortError::Unauthorized(path.to_string()))
        }
    }

    pub fn port_owner(&self, port: &PortId) -> Option<String> {
        self.private
            .get(&format!("host/ports/{port}"))
            .map(|b| String::from_utf8(b).expect("utf-8 owner"))
    }

    /// First-come first-serve port allocation.
    pub fn bind_port(&mut self, module: &str, port: &PortId) -> Result<Capability, PortError> {
        self.atomically(|l| {
            if l.port_owner(port).is_some() {
                return Err(PortError::PortAlreadyBound(port.clone()));
            }
            l.private.set(format!("host/ports/{port}"), module.as_bytes().to_vec());
            Ok(l.new_capability(&port_cap_path(port)))
        })
    }

    pub fn release_port(&mut self, port: &PortId, cap: &Capability) -> Result<(), PortError> {
        self.atomically(|l| {
            if l.port_owner(port).is_none() {
                return Err(PortError::NotBound(port.clone()));
            }
            l.require_capability(&port_cap_path(port), cap)?;
            l.private.delete(&format!("host/ports/{port}"));
            l.private.delete(&format!("host/caps/{}", port_cap_path(port)));
            Ok(())
        })
    }
}

impl From<LedgerHalted> for PortError {
    fn from(_: LedgerHalted) -> Self {
        PortError::Unauthorized("ledger halted".into())
    }
}

pub(crate) fn port_cap_path(port: &PortId) -> String {
    format!("ports/{port}")
}

pub(crate) fn channel_cap_path(port: &PortId, chan: &ChannelId) -> String {
    format!("channels/{port}/{chan}")
}
