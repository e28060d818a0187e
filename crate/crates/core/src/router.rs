//! Port-to-module dispatch. Relayers submit datagrams to one entry point;
//! the router runs the core handler and the owning module's callback inside
//! the same transaction.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use crate::channel::{ChannelOpen, CleanupWitness, Packet};
use crate::client::{ClientState, ConsensusState, Header, Misbehaviour};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::events::{Event, EventKind};
use crate::ident::{ChannelId, ClientId, ConnectionId, PortId};
use crate::ledger::{channel_cap_path, port_cap_path, Capability, HandlerError, Ledger, PortError, TxError};
use crate::store::{CommitmentPrefix, CommitmentProof};

/// Application callbacks. Every hook runs inside the transaction of the
/// datagram that triggered it; an `Err` aborts the whole transaction.
pub trait Module: Send + Sync + Debug {
    fn name(&self) -> &str;

    fn on_chan_open_init(&self, _ctx: &mut ModuleCtx<'_>, _open: &ChannelOpen) -> Result<(), HandlerError> {
        Ok(())
    }

    /// Default policy accepts only a counterparty version equal to ours.
    fn on_chan_open_try(
        &self,
        _ctx: &mut ModuleCtx<'_>,
        open: &ChannelOpen,
        counterparty_version: &str,
    ) -> Result<(), HandlerError> {
        if open.version == counterparty_version {
            Ok(())
        } else {
            Err(HandlerError::Module(format!(
                "version {counterparty_version:?} not accepted, expected {:?}",
                open.version
            )))
        }
    }

    fn on_chan_open_ack(
        &self,
        _ctx: &mut ModuleCtx<'_>,
        _channel: &ChannelId,
        _counterparty_version: &str,
    ) -> Result<(), HandlerError> {
        Ok(())
    }

    fn on_chan_open_confirm(&self, _ctx: &mut ModuleCtx<'_>, _channel: &ChannelId) -> Result<(), HandlerError> {
        Ok(())
    }

    fn on_chan_close(&self, _ctx: &mut ModuleCtx<'_>, _channel: &ChannelId) -> Result<(), HandlerError> {
        Ok(())
    }

    /// Returns the acknowledgement bytes.
    fn on_recv_packet(&self, ctx: &mut ModuleCtx<'_>, packet: &Packet) -> Result<Vec<u8>, HandlerError>;

    fn on_acknowledge_packet(
        &self,
        _ctx: &mut ModuleCtx<'_>,
        _packet: &Packet,
        _ack: &[u8],
    ) -> Result<(), HandlerError> {
        Ok(())
    }

    fn on_timeout_packet(&self, _ctx: &mut ModuleCtx<'_>, _packet: &Packet) -> Result<(), HandlerError> {
        Ok(())
    }
}

/// A module's view of its host: private state under its own namespace and
/// packet operations on the one port it owns.
pub struct ModuleCtx<'a> {
    ledger: &'a mut Ledger,
    module: String,
    port: PortId,
}

impl<'a> ModuleCtx<'a> {
    pub fn ledger(&self) -> &Ledger {
        self.ledger
    }

    pub fn port(&self) -> &PortId {
        &self.port
    }

    fn private_key(&self, key: &str) -> String {
        format!("app/{}/{key}", self.module)
    }

    pub fn get(&self, key: &str) -> Option<Vec<u8>> {
        self.ledger.private.get(&self.private_key(key))
    }

    pub fn set(&mut self, key: &str, value: Vec<u8>) {
        let k = self.private_key(key);
        self.ledger.private.set(k, value);
    }

    pub fn delete(&mut self, key: &str) {
        let k = self.private_key(key);
        self.ledger.private.delete(&k);
    }

    /// Keys (namespace stripped) under `prefix`.
    pub fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        let ns = self.private_key("");
        self.ledger
            .private
            .keys_with_prefix(&format!("{ns}{prefix}"))
            .into_iter()
            .map(|k| k[ns.len()..].to_string())
            .collect()
    }

    pub fn emit(&mut self, action: &str, attributes: BTreeMap<String, String>) {
        let module = self.module.clone();
        self.ledger.emit(EventKind::App { module, action: action.to_string(), attributes });
    }

    /// Sends on a channel of this module's port with the next sequence.
    pub fn send_packet(
        &mut self,
        channel: &ChannelId,
        timeout_height: u64,
        timeout_timestamp: u64,
        data: Vec<u8>,
    ) -> Result<Packet, HandlerError> {
        let end = self.ledger.channel_end(&self.port, channel)?;
        let packet = Packet {
            sequence: self.ledger.next_sequence_send(&self.port, channel)?,
            timeout_height,
            timeout_timestamp,
            source_port: self.port.clone(),
            source_channel: channel.clone(),
            dest_port: end.counterparty_port,
            dest_channel: end.counterparty_channel,
            data,
        };
        let cap = self.ledger.module_capability(&channel_cap_path(&self.port, channel));
        self.ledger.send_packet(&packet, &cap)?;
        Ok(packet)
    }

    pub fn close_channel(&mut self, channel: &ChannelId) -> Result<(), HandlerError> {
        let cap = self.ledger.module_capability(&channel_cap_path(&self.port, channel));
        self.ledger.chan_close_init(&self.port, channel, &cap)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Datagram {
    ClientUpdate {
        client: ClientId,
        header: Header,
    },
    ConnOpenInit {
        connection: ConnectionId,
        counterparty_connection: ConnectionId,
        counterparty_prefix: CommitmentPrefix,
        client: ClientId,
        counterparty_client: ClientId,
    },
    ConnOpenTry {
        connection: ConnectionId,
        counterparty_connection: ConnectionId,
        counterparty_prefix: CommitmentPrefix,
        counterparty_client: ClientId,
        client: ClientId,
        counterparty_versions: Vec<String>,
        proof_init: CommitmentProof,
        proof_consensus: CommitmentProof,
        proof_height: u64,
        consensus_height: u64,
    },
    ConnOpenAck {
        connection: ConnectionId,
        version: String,
        proof_try: CommitmentProof,
        proof_consensus: CommitmentProof,
        proof_height: u64,
        consensus_height: u64,
    },
    ConnOpenConfirm {
        connection: ConnectionId,
        proof_ack: CommitmentProof,
        proof_height: u64,
    },
    ChanOpenInit(ChannelOpen),
    ChanOpenTry {
        open: ChannelOpen,
        counterparty_version: String,
        proof_init: CommitmentProof,
        proof_height: u64,
    },
    ChanOpenAck {
        port: PortId,
        channel: ChannelId,
        counterparty_version: String,
        proof_try: CommitmentProof,
        proof_height: u64,
    },
    ChanOpenConfirm {
        port: PortId,
        channel: ChannelId,
        proof_ack: CommitmentProof,
        proof_height: u64,
    },
    ChanCloseInit {
        port: PortId,
        channel: ChannelId,
    },
    ChanCloseConfirm {
        port: PortId,
        channel: ChannelId,
        proof_init: CommitmentProof,
        proof_height: u64,
    },
    PacketRecv {
        packet: Packet,
        proof: CommitmentProof,
        proof_height: u64,
    },
    PacketAck {
        packet: Packet,
        ack: Vec<u8>,
        proof: CommitmentProof,
        proof_height: u64,
    },
    PacketTimeout {
        packet: Packet,
        proof: CommitmentProof,
        proof_height: u64,
        next_sequence_recv: Option<u64>,
    },
    PacketTimeoutOnClose {
        packet: Packet,
        proof_closed: CommitmentProof,
        proof_unreceived: CommitmentProof,
        proof_height: u64,
        next_sequence_recv: Option<u64>,
    },
    PacketCleanup {
        packet: Packet,
        proof: CommitmentProof,
        proof_height: u64,
        witness: CleanupWitness,
    },
    ClientCreate {
        client: ClientId,
        state: ClientState,
        consensus: ConsensusState,
    },
    ClientMisbehaviour {
        client: ClientId,
        evidence: Misbehaviour,
    },
}

impl Datagram {
    /// Wire tag of the variant.
    pub fn tag(&self) -> u8 {
        match self {
            Datagram::ClientUpdate { .. } => 0,
            Datagram::ConnOpenInit { .. } => 1,
            Datagram::ConnOpenTry { .. } => 2,
            Datagram::ConnOpenAck { .. } => 3,
            Datagram::ConnOpenConfirm { .. } => 4,
            Datagram::ChanOpenInit(_) => 5,
            Datagram::ChanOpenTry { .. } => 6,
            Datagram::ChanOpenAck { .. } => 7,
            Datagram::ChanOpenConfirm { .. } => 8,
            Datagram::ChanCloseInit { .. } => 9,
            Datagram::ChanCloseConfirm { .. } => 10,
            Datagram::PacketRecv { .. } => 11,
            Datagram::PacketAck { .. } => 12,
            Datagram::PacketTimeout { .. } => 13,
            Datagram::PacketTimeoutOnClose { .. } => 14,
            Datagram::PacketCleanup { .. } => 15,
            Datagram::ClientCreate { .. } => 16,
            Datagram::ClientMisbehaviour { .. } => 17,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Datagram::ClientUpdate { .. } => "ClientUpdate",
            Datagram::ConnOpenInit { .. } => "ConnOpenInit",
            Datagram::ConnOpenTry { .. } => "ConnOpenTry",
            Datagram::ConnOpenAck { .. } => "ConnOpenAck",
            Datagram::ConnOpenConfirm { .. } => "ConnOpenConfirm",
            Datagram::ChanOpenInit(_) => "ChanOpenInit",
            Datagram::ChanOpenTry { .. } => "ChanOpenTry",
            Datagram::ChanOpenAck { .. } => "ChanOpenAck",
            Datagram::ChanOpenConfirm { .. } => "ChanOpenConfirm",
            Datagram::ChanCloseInit { .. } => "ChanCloseInit",
            Datagram::ChanCloseConfirm { .. } => "ChanCloseConfirm",
            Datagram::PacketRecv { .. } => "PacketRecv",
            Datagram::PacketAck { .. } => "PacketAck",
            Datagram::PacketTimeout { .. } => "PacketTimeout",
            Datagram::PacketTimeoutOnClose { .. } => "PacketTimeoutOnClose",
            Datagram::PacketCleanup { .. } => "PacketCleanup",
            Datagram::ClientCreate { .. } => "ClientCreate",
            Datagram::ClientMisbehaviour { .. } => "ClientMisbehaviour",
        }
    }

    /// The packet a packet datagram carries.
    pub fn packet(&self) -> Option<&Packet> {
        match self {
            Datagram::PacketRecv { packet, .. }
            | Datagram::PacketAck { packet, .. }
            | Datagram::PacketTimeout { packet, .. }
            | Datagram::PacketTimeoutOnClose { packet, .. }
            | Datagram::PacketCleanup { packet, .. } => Some(packet),
            _ => None,
        }
    }

    pub fn packet_mut(&mut self) -> Option<&mut Packet> {
        match self {
            Datagram::PacketRecv { packet, .. }
            | Datagram::PacketAck { packet, .. }
            | Datagram::PacketTimeout { packet, .. }
            | Datagram::PacketTimeoutOnClose { packet, .. }
            | Datagram::PacketCleanup { packet, .. } => Some(packet),
            _ => None,
        }
    }
}

impl Canonical for ChannelOpen {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.ordering)
            .list(&self.connection_hops)
            .put(&self.port)
            .put(&self.channel)
            .put(&self.counterparty_port)
            .put(&self.counterparty_channel)
            .str(&self.version);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(ChannelOpen {
            ordering: dec.get()?,
            connection_hops: dec.list()?,
            port: dec.get()?,
            channel: dec.get()?,
            counterparty_port: dec.get()?,
            counterparty_channel: dec.get()?,
            version: dec.string()?,
        })
    }
}

impl Canonical for Datagram {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.tag());
        match self {
            Datagram::ClientUpdate { client, header } => {
                enc.put(client).put(header);
            }
            Datagram::ConnOpenInit { connection, counterparty_connection, counterparty_prefix, client, counterparty_client } => {
                enc.put(connection)
                    .put(counterparty_connection)
                    .put(counterparty_prefix)
                    .put(client)
                    .put(counterparty_client);
            }
            Datagram::ConnOpenTry {
                connection,
                counterparty_connection,
                counterparty_prefix,
                counterparty_client,
                client,
                counterparty_versions,
                proof_init,
                proof_consensus,
                proof_height,
                consensus_height,
            } => {
                enc.put(connection)
                    .put(counterparty_connection)
                    .put(counterparty_prefix)
                    .put(counterparty_client)
                    .put(client)
                    .list(counterparty_versions)
                    .put(proof_init)
                    .put(proof_consensus)
                    .u64(*proof_height)
                    .u64(*consensus_height);
            }
            Datagram::ConnOpenAck { connection, version, proof_try, proof_consensus, proof_height, consensus_height } => {
                enc.put(connection)
                    .str(version)
                    .put(proof_try)
                    .put(proof_consensus)
                    .u64(*proof_height)
                    .u64(*consensus_height);
            }
            Datagram::ConnOpenConfirm { connection, proof_ack, proof_height } => {
                enc.put(connection).put(proof_ack).u64(*proof_height);
            }
            Datagram::ChanOpenInit(open) => {
                enc.put(open);
            }
            Datagram::ChanOpenTry { open, counterparty_version, proof_init, proof_height } => {
                enc.put(open).str(counterparty_version).put(proof_init).u64(*proof_height);
            }
            Datagram::ChanOpenAck { port, channel, counterparty_version, proof_try, proof_height } => {
                enc.put(port).put(channel).str(counterparty_version).put(proof_try).u64(*proof_height);
            }
            Datagram::ChanOpenConfirm { port, channel, proof_ack, proof_height } => {
                enc.put(port).put(channel).put(proof_ack).u64(*proof_height);
            }
            Datagram::ChanCloseInit { port, channel } => {
                enc.put(port).put(channel);
            }
            Datagram::ChanCloseConfirm { port, channel, proof_init, proof_height } => {
                enc.put(port).put(channel).put(proof_init).u64(*proof_height);
            }
            Datagram::PacketRecv { packet, proof, proof_height } => {
                enc.put(packet).put(proof).u64(*proof_height);
            }
            Datagram::PacketAck { packet, ack, proof, proof_height } => {
                enc.put(packet).bytes(ack).put(proof).u64(*proof_height);
            }
            Datagram::PacketTimeout { packet, proof, proof_height, next_sequence_recv } => {
                enc.put(packet).put(proof).u64(*proof_height).option(next_sequence_recv.as_ref());
            }
            Datagram::PacketTimeoutOnClose { packet, proof_closed, proof_unreceived, proof_height, next_sequence_recv } => {
                enc.put(packet)
                    .put(proof_closed)
                    .put(proof_unreceived)
                    .u64(*proof_height)
                    .option(next_sequence_recv.as_ref());
            }
            Datagram::PacketCleanup { packet, proof, proof_height, witness } => {
                enc.put(packet).put(proof).u64(*proof_height).put(witness);
            }
            Datagram::ClientCreate { client, state, consensus } => {
                enc.put(client).put(state).put(consensus);
            }
            Datagram::ClientMisbehaviour { client, evidence } => {
                enc.put(client).put(evidence);
            }
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Datagram::ClientUpdate { client: dec.get()?, header: dec.get()? },
            1 => Datagram::ConnOpenInit {
                connection: dec.get()?,
                counterparty_connection: dec.get()?,
                counterparty_prefix: dec.get()?,
                client: dec.get()?,
                counterparty_client: dec.get()?,
            },
            2 => Datagram::ConnOpenTry {
                connection: dec.get()?,
                counterparty_connection: dec.get()?,
                counterparty_prefix: dec.get()?,
                counterparty_client: dec.get()?,
                client: dec.get()?,
                counterparty_versions: dec.list()?,
                proof_init: dec.get()?,
                proof_consensus: dec.get()?,
                proof_height: dec.u64()?,
                consensus_height: dec.u64()?,
            },
            3 => Datagram::ConnOpenAck {
                connection: dec.get()?,
                version: dec.string()?,
                proof_try: dec.get()?,
                proof_consensus: dec.get()?,
                proof_height: dec.u64()?,
                consensus_height: dec.u64()?,
            },
            4 => Datagram::ConnOpenConfirm { connection: dec.get()?, proof_ack: dec.get()?, proof_height: dec.u64()? },
            5 => Datagram::ChanOpenInit(dec.get()?),
            6 => Datagram::ChanOpenTry {
                open: dec.get()?,
                counterparty_version: dec.string()?,
                proof_init: dec.get()?,
                proof_height: dec.u64()?,
            },
            7 => Datagram::ChanOpenAck {
                port: dec.get()?,
                channel: dec.get()?,
                counterparty_version: dec.string()?,
                proof_try: dec.get()?,
                proof_height: dec.u64()?,
            },
            8 => Datagram::ChanOpenConfirm {
                port: dec.get()?,
                channel: dec.get()?,
                proof_ack: dec.get()?,
                proof_height: dec.u64()?,
            },
            9 => Datagram::ChanCloseInit { port: dec.get()?, channel: dec.get()? },
            10 => Datagram::ChanCloseConfirm {
                port: dec.get()?,
                channel: dec.get()?,
                proof_init: dec.get()?,
                proof_height: dec.u64()?,
            },
            11 => Datagram::PacketRecv { packet: dec.get()?, proof: dec.get()?, proof_height: dec.u64()? },
            12 => Datagram::PacketAck {
                packet: dec.get()?,
                ack: dec.bytes()?,
                proof: dec.get()?,
                proof_height: dec.u64()?,
            },
            13 => Datagram::PacketTimeout {
                packet: dec.get()?,
                proof: dec.get()?,
                proof_height: dec.u64()?,
                next_sequence_recv: dec.option()?,
            },
            14 => Datagram::PacketTimeoutOnClose {
                packet: dec.get()?,
                proof_closed: dec.get()?,
                proof_unreceived: dec.get()?,
                proof_height: dec.u64()?,
                next_sequence_recv: dec.option()?,
            },
            15 => Datagram::PacketCleanup {
                packet: dec.get()?,
                proof: dec.get()?,
                proof_height: dec.u64()?,
                witness: dec.get()?,
            },
            16 => Datagram::ClientCreate { client: dec.get()?, state: dec.get()?, consensus: dec.get()? },
            17 => Datagram::ClientMisbehaviour { client: dec.get()?, evidence: dec.get()? },
            tag => return Err(DecodeError::BadTag { what: "datagram", tag }),
        })
    }
}

/// Outcome of a committed transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxReceipt {
    /// Height of the block that will include the transaction.
    pub height: u64,
    pub events: Vec<Event>,
}

fn router_cap_key(path: &str) -> String {
    format!("router/caps/{path}")
}

impl Ledger {
    /// Binds `port` to `module` and routes its datagrams there.
    pub fn register_module(&mut self, port: &PortId, module: Arc<dyn Module>) -> Result<(), PortError> {
        let cap = self.bind_port(module.name(), port)?;
        self.private.set(router_cap_key(&port_cap_path(port)), cap.token().to_vec());
        self.modules.insert(port.clone(), module);
        Ok(())
    }

    pub fn module_for(&self, port: &PortId) -> Option<&Arc<dyn Module>> {
        self.modules.get(port)
    }

    /// Capability the router holds on behalf of modules. Missing entries
    /// yield a token that authenticates nothing.
    pub(crate) fn module_capability(&self, path: &str) -> Capability {
        let token = self
            .private
            .get(&router_cap_key(path))
            .and_then(|b| <[u8; 32]>::try_from(b.as_slice()).ok())
            .unwrap_or([0; 32]);
        Capability::from_bytes(token)
    }

    fn store_module_capability(&mut self, path: &str, cap: &Capability) {
        self.private.set(router_cap_key(path), cap.token().to_vec());
    }

    fn routed(&self, port: &PortId) -> Result<(Arc<dyn Module>, String), HandlerError> {
        let module = self.modules.get(port).cloned().ok_or_else(|| HandlerError::UnknownPort(port.clone()))?;
        let name = module.name().to_string();
        Ok((module, name))
    }

    fn with_ctx<T>(
        &mut self,
        port: &PortId,
        f: impl FnOnce(&dyn Module, &mut ModuleCtx<'_>) -> Result<T, HandlerError>,
    ) -> Result<T, HandlerError> {
        let (module, name) = self.routed(port)?;
        let mut ctx = ModuleCtx { ledger: self, module: name, port: port.clone() };
        f(module.as_ref(), &mut ctx)
    }

    /// Runs a module-initiated action (e.g. a user transfer) as one
    /// transaction on behalf of the module bound to `port`.
    pub fn module_call<T>(
        &mut self,
        port: &PortId,
        f: impl FnOnce(&mut ModuleCtx<'_>) -> Result<T, HandlerError>,
    ) -> Result<T, TxError> {
        self.atomically(|l| {
            l.with_ctx(port, |_, ctx| f(ctx)).map_err(|reason| TxError::Aborted { index: 0, reason })
        })
    }

    /// Applies `datagrams` in order as one transaction.
    pub fn execute_transaction(&mut self, datagrams: &[Datagram]) -> Result<TxReceipt, TxError> {
        let before = self.pending_events().len();
        self.atomically(|l| {
            for (index, d) in datagrams.iter().enumerate() {
                l.dispatch(d).map_err(|reason| TxError::Aborted { index, reason })?;
            }
            Ok::<(), TxError>(())
        })?;
        Ok(TxReceipt { height: self.height() + 1, events: self.pending_events()[before..].to_vec() })
    }

    fn dispatch(&mut self, d: &Datagram) -> Result<(), HandlerError> {
        match d {
            Datagram::ClientCreate { client, state, consensus } => {
                self.create_client(client, state.clone(), consensus.clone())
            }
            Datagram::ClientUpdate { client, header } => self.update_client(client, header),
            Datagram::ClientMisbehaviour { client, evidence } => self.submit_misbehaviour(client, evidence),
            Datagram::ConnOpenInit { connection, counterparty_connection, counterparty_prefix, client, counterparty_client } => {
                self.conn_open_init(connection, counterparty_connection, counterparty_prefix, client, counterparty_client)
            }
            Datagram::ConnOpenTry {
                connection,
                counterparty_connection,
                counterparty_prefix,
                counterparty_client,
                client,
                counterparty_versions,
                proof_init,
                proof_consensus,
                proof_height,
                consensus_height,
            } => self.conn_open_try(
                connection,
                counterparty_connection,
                counterparty_prefix,
                counterparty_client,
                client,
                counterparty_versions,
                proof_init,
                proof_consensus,
                *proof_height,
                *consensus_height,
            ),
            Datagram::ConnOpenAck { connection, version, proof_try, proof_consensus, proof_height, consensus_height } => {
                self.conn_open_ack(connection, version, proof_try, proof_consensus, *proof_height, *consensus_height)
            }
            Datagram::ConnOpenConfirm { connection, proof_ack, proof_height } => {
                self.conn_open_confirm(connection, proof_ack, *proof_height)
            }
            Datagram::ChanOpenInit(open) => {
                self.with_ctx(&open.port, |m, ctx| m.on_chan_open_init(ctx, open))?;
                let port_cap = self.module_capability(&port_cap_path(&open.port));
                let cap = self.chan_open_init(open, &port_cap)?;
                self.store_module_capability(&channel_cap_path(&open.port, &open.channel), &cap);
                Ok(())
            }
            Datagram::ChanOpenTry { open, counterparty_version, proof_init, proof_height } => {
                self.with_ctx(&open.port, |m, ctx| m.on_chan_open_try(ctx, open, counterparty_version))?;
                let port_cap = self.module_capability(&port_cap_path(&open.port));
                let cap = self.chan_open_try(open, counterparty_version, proof_init, *proof_height, &port_cap)?;
                self.store_module_capability(&channel_cap_path(&open.port, &open.channel), &cap);
                Ok(())
            }
            Datagram::ChanOpenAck { port, channel, counterparty_version, proof_try, proof_height } => {
                let cap = self.module_capability(&channel_cap_path(port, channel));
                self.chan_open_ack(port, channel, counterparty_version, proof_try, *proof_height, &cap)?;
                self.with_ctx(port, |m, ctx| m.on_chan_open_ack(ctx, channel, counterparty_version))
            }
            Datagram::ChanOpenConfirm { port, channel, proof_ack, proof_height } => {
                let cap = self.module_capability(&channel_cap_path(port, channel));
                self.chan_open_confirm(port, channel, proof_ack, *proof_height, &cap)?;
                self.with_ctx(port, |m, ctx| m.on_chan_open_confirm(ctx, channel))
            }
            Datagram::ChanCloseInit { port, channel } => {
                let cap = self.module_capability(&channel_cap_path(port, channel));
                self.chan_close_init(port, channel, &cap)?;
                self.with_ctx(port, |m, ctx| m.on_chan_close(ctx, channel))
            }
            Datagram::ChanCloseConfirm { port, channel, proof_init, proof_height } => {
                let cap = self.module_capability(&channel_cap_path(port, channel));
                self.chan_close_confirm(port, channel, proof_init, *proof_height, &cap)?;
                self.with_ctx(port, |m, ctx| m.on_chan_close(ctx, channel))
            }
            Datagram::PacketRecv { packet, proof, proof_height } => {
                let ack = self.with_ctx(&packet.dest_port, |m, ctx| m.on_recv_packet(ctx, packet))?;
                let cap = self.module_capability(&channel_cap_path(&packet.dest_port, &packet.dest_channel));
                self.recv_packet(packet, proof, *proof_height, &ack, &cap)
            }
            Datagram::PacketAck { packet, ack, proof, proof_height } => {
                let cap = self.module_capability(&channel_cap_path(&packet.source_port, &packet.source_channel));
                self.acknowledge_packet(packet, ack, proof, *proof_height, &cap)?;
                self.with_ctx(&packet.source_port, |m, ctx| m.on_acknowledge_packet(ctx, packet, ack))
            }
            Datagram::PacketTimeout { packet, proof, proof_height, next_sequence_recv } => {
                let cap = self.module_capability(&channel_cap_path(&packet.source_port, &packet.source_channel));
                self.timeout_packet(packet, proof, *proof_height, *next_sequence_recv, &cap)?;
                self.with_ctx(&packet.source_port, |m, ctx| m.on_timeout_packet(ctx, packet))
            }
            Datagram::PacketTimeoutOnClose { packet, proof_closed, proof_unreceived, proof_height, next_sequence_recv } => {
                let cap = self.module_capability(&channel_cap_path(&packet.source_port, &packet.source_channel));
                self.timeout_on_close(packet, proof_closed, proof_unreceived, *proof_height, *next_sequence_recv, &cap)?;
                self.with_ctx(&packet.source_port, |m, ctx| m.on_timeout_packet(ctx, packet))
            }
            Datagram::PacketCleanup { packet, proof, proof_height, witness } => {
                let cap = self.module_capability(&channel_cap_path(&packet.source_port, &packet.source_channel));
                self.cleanup_packet(packet, proof, *proof_height, witness, &cap)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Order;

    fn samples() -> Vec<Datagram> {
        let port = PortId::new("transfer").unwrap();
        let chan = ChannelId::new("ch-0").unwrap();
        vec![
            Datagram::ChanCloseInit { port: port.clone(), channel: chan.clone() },
            Datagram::ChanOpenInit(ChannelOpen {
                ordering: Order::Ordered,
                connection_hops: vec![ConnectionId::new("conn-0").unwrap()],
                port: port.clone(),
                channel: chan.clone(),
                counterparty_port: port,
                counterparty_channel: chan,
                version: "v".into(),
            }),
        ]
    }

    #[test]
    fn encoding_round_trips_and_leads_with_the_tag() {
        for d in samples() {
            let bytes = d.to_bytes();
            assert_eq!(bytes[0], d.tag());
            assert_eq!(Datagram::from_bytes(&bytes).unwrap(), d);
        }
    }

    #[test]
    fn trailing_and_unknown_bytes_are_rejected() {
        for d in samples() {
            let mut bytes = d.to_bytes();
            bytes.push(0);
            assert!(Datagram::from_bytes(&bytes).is_err());
            bytes.pop();
            bytes[0] = 200;
            assert!(Datagram::from_bytes(&bytes).is_err());
            assert!(Datagram::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
    }
}
