//! Channel ends, the channel open/close handshakes and the packet lifecycle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::connection::{ConnectionEnd, ConnectionState};
use crate::encoding::{hash_parts, sha256, Canonical, DecodeError, Decoder, Digest, Encoder};
use crate::events::EventKind;
use crate::ident::{ChannelId, ConnectionId, PortId};
use crate::ledger::{channel_cap_path, port_cap_path, Capability, HandlerError, Ledger, PacketKey, PortError};
use crate::paths;
use crate::store::CommitmentProof;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChannelState {
    Init,
    TryOpen,
    Open,
    Closed,
}

impl Canonical for ChannelState {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self {
            ChannelState::Init => 1,
            ChannelState::TryOpen => 2,
            ChannelState::Open => 3,
            ChannelState::Closed => 4,
        });
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            1 => Ok(ChannelState::Init),
            2 => Ok(ChannelState::TryOpen),
            3 => Ok(ChannelState::Open),
            4 => Ok(ChannelState::Closed),
            tag => Err(DecodeError::BadTag { what: "channel state", tag }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Ordered,
    Unordered,
}

impl Canonical for Order {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self {
            Order::Ordered => 1,
            Order::Unordered => 2,
        });
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            1 => Ok(Order::Ordered),
            2 => Ok(Order::Unordered),
            tag => Err(DecodeError::BadTag { what: "channel order", tag }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelEnd {
    pub state: ChannelState,
    pub ordering: Order,
    pub counterparty_port: PortId,
    pub counterparty_channel: ChannelId,
    pub connection_hops: Vec<ConnectionId>,
    pub version: String,
}

impl ChannelEnd {
    pub fn connection(&self) -> &ConnectionId {
        &self.connection_hops[0]
    }
}

impl Canonical for ChannelEnd {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.state)
            .put(&self.ordering)
            .put(&self.counterparty_port)
            .put(&self.counterparty_channel)
            .list(&self.connection_hops)
            .str(&self.version);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let end = ChannelEnd {
            state: dec.get()?,
            ordering: dec.get()?,
            counterparty_port: dec.get()?,
            counterparty_channel: dec.get()?,
            connection_hops: dec.list()?,
            version: dec.string()?,
        };
        if end.connection_hops.len() != 1 {
            return Err(DecodeError::Invalid("channel must have exactly one connection hop".into()));
        }
        Ok(end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub sequence: u64,
    /// 0 disables the height timeout.
    pub timeout_height: u64,
    /// 0 disables the timestamp timeout.
    pub timeout_timestamp: u64,
    pub source_port: PortId,
    pub source_channel: ChannelId,
    pub dest_port: PortId,
    pub dest_channel: ChannelId,
    #[serde(with = "crate::serde_hex")]
    pub data: Vec<u8>,
}

impl Packet {
    /// Value stored under the commitment path while the packet is in flight.
    pub fn commitment(&self) -> Digest {
        commit_packet(&self.data, self.timeout_height, self.timeout_timestamp)
    }

    pub(crate) fn source_key(&self) -> PacketKey {
        (self.source_port.clone(), self.source_channel.clone(), self.sequence)
    }

    pub(crate) fn dest_key(&self) -> PacketKey {
        (self.dest_port.clone(), self.dest_channel.clone(), self.sequence)
    }
}

impl Canonical for Packet {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.sequence)
            .u64(self.timeout_height)
            .u64(self.timeout_timestamp)
            .put(&self.source_port)
            .put(&self.source_channel)
            .put(&self.dest_port)
            .put(&self.dest_channel)
            .bytes(&self.data);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Packet {
            sequence: dec.u64()?,
            timeout_height: dec.u64()?,
            timeout_timestamp: dec.u64()?,
            source_port: dec.get()?,
            source_channel: dec.get()?,
            dest_port: dec.get()?,
            dest_channel: dec.get()?,
            data: dec.bytes()?,
        })
    }
}

/// `H(len(data) || data || timeoutHeight || timeoutTimestamp)`.
pub fn commit_packet(data: &[u8], timeout_height: u64, timeout_timestamp: u64) -> Digest {
    let len = u32::try_from(data.len()).expect("packet data fits u32").to_be_bytes();
    hash_parts(&[&len, data, &timeout_height.to_be_bytes(), &timeout_timestamp.to_be_bytes()])
}

pub fn commit_ack(ack: &[u8]) -> Digest {
    sha256(ack)
}

/// What a cleanup proves about the destination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanupWitness {
    NextSequenceRecv(u64),
    Acknowledgement(#[serde(with = "crate::serde_hex")] Vec<u8>),
}

impl Canonical for CleanupWitness {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            CleanupWitness::NextSequenceRecv(n) => enc.u8(0).u64(*n),
            CleanupWitness::Acknowledgement(a) => enc.u8(1).bytes(a),
        };
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(CleanupWitness::NextSequenceRecv(dec.u64()?)),
            1 => Ok(CleanupWitness::Acknowledgement(dec.bytes()?)),
            tag => Err(DecodeError::BadTag { what: "cleanup witness", tag }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("channel {port}/{channel} already exists")]
    IdentifierInUse { port: PortId, channel: ChannelId },
    #[error("no channel {port}/{channel}")]
    NoSuchChannel { port: PortId, channel: ChannelId },
    #[error("no connection {0}")]
    NoSuchConnection(ConnectionId),
    #[error("connection {0} not open")]
    ConnectionNotOpen(ConnectionId),
    #[error("channels must have exactly one connection hop")]
    MultiHopUnsupported,
    #[error("unauthorized for {0}")]
    Unauthorized(String),
    #[error("channel is {0:?}")]
    BadState(ChannelState),
    #[error("channel already closed")]
    AlreadyClosed,
    #[error("channel closed")]
    ChannelClosed,
    #[error("channel not open")]
    ChannelNotOpen,
    #[error("existing channel end conflicts with the handshake")]
    ConflictingPriorState,
    #[error("proof of {0} failed")]
    ProofFailure(&'static str),
    #[error("packet counterparty fields do not match the channel")]
    WrongCounterparty,
    #[error("timeout height {timeout_height} already reached by client height {client_height}")]
    TimeoutElapsedOnClient { timeout_height: u64, client_height: u64 },
    #[error("client of the connection is frozen")]
    ClientFrozen,
    #[error("expected sequence {expected}, got {got}")]
    WrongSequence { expected: u64, got: u64 },
    #[error("packet timed out")]
    TimedOut,
    #[error("ordered receive expected sequence {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("packet {0} already received")]
    DuplicateReceipt(u64),
    #[error("no commitment for packet {0}")]
    NoCommitment(u64),
    #[error("packet does not match its commitment")]
    CommitmentMismatch,
    #[error("ordered acknowledgement expected sequence {expected}, got {got}")]
    WrongAckSequence { expected: u64, got: u64 },
    #[error("packet has not timed out on the destination")]
    NotYetTimedOut,
    #[error("destination already received the packet")]
    PacketWasReceived,
    #[error("counterparty channel not closed")]
    ChannelNotClosed,
    #[error("destination has not processed the packet")]
    NotYetProcessed,
    #[error("ordered channels need the destination's next receive sequence")]
    MissingNextSequenceRecv,
    #[error("witness kind does not match the channel order")]
    WrongWitness,
}

impl From<PortError> for ChannelError {
    fn from(e: PortError) -> Self {
        ChannelError::Unauthorized(e.to_string())
    }
}

/// Argument bundle shared by the opening steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelOpen {
    pub ordering: Order,
    pub connection_hops: Vec<ConnectionId>,
    pub port: PortId,
    pub channel: ChannelId,
    pub counterparty_port: PortId,
    pub counterparty_channel: ChannelId,
    pub version: String,
}

fn read_u64(l: &Ledger, path: &str) -> Result<u64, HandlerError> {
    Ok(l.read::<u64>(path)?.unwrap_or(0))
}

impl Ledger {
    pub fn channel_end(&self, port: &PortId, chan: &ChannelId) -> Result<ChannelEnd, HandlerError> {
        self.read(&paths::channel(port, chan))?.ok_or_else(|| {
            ChannelError::NoSuchChannel { port: port.clone(), channel: chan.clone() }.into()
        })
    }

    /// All (port, channel) pairs in the working state.
    pub fn channel_ids(&self) -> Vec<(PortId, ChannelId)> {
        self.paths_with_prefix(paths::CHANNELS_PREFIX)
            .iter()
            .filter_map(|p| {
                let rest = &p[paths::CHANNELS_PREFIX.len()..];
                let (port, chan) = rest.split_once("/channels/")?;
                Some((PortId::new(port).ok()?, ChannelId::new(chan).ok()?))
            })
            .collect()
    }

    pub fn next_sequence_send(&self, port: &PortId, chan: &ChannelId) -> Result<u64, HandlerError> {
        read_u64(self, &paths::next_sequence_send(port, chan))
    }

    pub fn next_sequence_recv(&self, port: &PortId, chan: &ChannelId) -> Result<u64, HandlerError> {
        read_u64(self, &paths::next_sequence_recv(port, chan))
    }

    pub fn next_sequence_ack(&self, port: &PortId, chan: &ChannelId) -> Result<u64, HandlerError> {
        read_u64(self, &paths::next_sequence_ack(port, chan))
    }

    /// Sequences with a live commitment in the working state.
    pub fn packet_commitment_sequences(&self, port: &PortId, chan: &ChannelId) -> Vec<u64> {
        let prefix = paths::packet_commitments_prefix(port, chan);
        let mut seqs: Vec<u64> = self
            .paths_with_prefix(&prefix)
            .iter()
            .filter_map(|p| p[prefix.len()..].parse().ok())
            .collect();
        seqs.sort_unstable();
        seqs
    }

    pub fn packet_commitment(&self, port: &PortId, chan: &ChannelId, seq: u64) -> Option<Vec<u8>> {
        self.read_raw(&paths::packet_commitment(port, chan, seq))
    }

    fn connection_for(&self, chan: &ChannelEnd) -> Result<ConnectionEnd, HandlerError> {
        let id = chan.connection();
        self.read::<ConnectionEnd>(&paths::connection(id))?
            .ok_or_else(|| ChannelError::NoSuchConnection(id.clone()).into())
    }

    fn open_connection_for(&self, chan: &ChannelEnd) -> Result<ConnectionEnd, HandlerError> {
        let conn = self.connection_for(chan)?;
        if conn.state != ConnectionState::Open {
            return Err(ChannelError::ConnectionNotOpen(chan.connection().clone()).into());
        }
        Ok(conn)
    }

    fn require_channel_cap(&self, port: &PortId, chan: &ChannelId, cap: &Capability) -> Result<(), HandlerError> {
        self.require_capability(&channel_cap_path(port, chan), cap)
            .map_err(|e| ChannelError::from(e).into())
    }

    #[allow(clippy::too_many_arguments)]
    fn verify_channel_state(
        &self,
        conn: &ConnectionEnd,
        height: u64,
        proof: &CommitmentProof,
        port: &PortId,
        chan: &ChannelId,
        expected: &ChannelEnd,
        what: &'static str,
    ) -> Result<(), HandlerError> {
        let ok = self.verify_membership(
            &conn.client,
            height,
            &conn.counterparty_prefix,
            &paths::channel(port, chan),
            &expected.to_bytes(),
            proof,
        )?;
        if ok {
            Ok(())
        } else {
            Err(ChannelError::ProofFailure(what).into())
        }
    }

    fn init_sequences(&mut self, port: &PortId, chan: &ChannelId) -> Result<(), HandlerError> {
        self.write(&paths::next_sequence_send(port, chan), &1u64)?;
        self.write(&paths::next_sequence_recv(port, chan), &1u64)?;
        self.write(&paths::next_sequence_ack(port, chan), &1u64)
    }

    pub fn chan_open_init(&mut self, open: &ChannelOpen, port_cap: &Capability) -> Result<Capability, HandlerError> {
        if open.connection_hops.len() != 1 {
            return Err(ChannelError::MultiHopUnsupported.into());
        }
        if self.read_raw(&paths::channel(&open.port, &open.channel)).is_some() {
            return Err(ChannelError::IdentifierInUse { port: open.port.clone(), channel: open.channel.clone() }.into());
        }
        if self.read_raw(&paths::connection(&open.connection_hops[0])).is_none() {
            return Err(ChannelError::NoSuchConnection(open.connection_hops[0].clone()).into());
        }
        self.require_capability(&port_cap_path(&open.port), port_cap).map_err(ChannelError::from)?;
        let end = ChannelEnd {
            state: ChannelState::Init,
            ordering: open.ordering,
            counterparty_port: open.counterparty_port.clone(),
            counterparty_channel: open.counterparty_channel.clone(),
            connection_hops: open.connection_hops.clone(),
            version: open.version.clone(),
        };
        self.write(&paths::channel(&open.port, &open.channel), &end)?;
        let cap = self.new_capability(&channel_cap_path(&open.port, &open.channel));
        self.init_sequences(&open.port, &open.channel)?;
        self.emit(EventKind::ChannelOpenInit { port: open.port.clone(), channel: open.channel.clone() });
        Ok(cap)
    }

    pub fn chan_open_try(
        &mut self,
        open: &ChannelOpen,
        counterparty_version: &str,
        proof_init: &CommitmentProof,
        proof_height: u64,
        port_cap: &Capability,
    ) -> Result<Capability, HandlerError> {
        if open.connection_hops.len() != 1 {
            return Err(ChannelError::MultiHopUnsupported.into());
        }
        if let Some(prev) = self.read::<ChannelEnd>(&paths::channel(&open.port, &open.channel))? {
            let crossing = prev.state == ChannelState::Init
                && prev.ordering == open.ordering
                && prev.counterparty_port == open.counterparty_port
                && prev.counterparty_channel == open.counterparty_channel
                && prev.connection_hops == open.connection_hops
                && prev.version == open.version;
            if !crossing {
                return Err(ChannelError::ConflictingPriorState.into());
            }
        }
        self.require_capability(&port_cap_path(&open.port), port_cap).map_err(ChannelError::from)?;
        let conn_id = &open.connection_hops[0];
        let conn = self
            .read::<ConnectionEnd>(&paths::connection(conn_id))?
            .ok_or_else(|| ChannelError::NoSuchConnection(conn_id.clone()))?;
        if conn.state != ConnectionState::Open {
            return Err(ChannelError::ConnectionNotOpen(conn_id.clone()).into());
        }
        let expected = ChannelEnd {
            state: ChannelState::Init,
            ordering: open.ordering,
            counterparty_port: open.port.clone(),
            counterparty_channel: open.channel.clone(),
            connection_hops: vec![conn.counterparty_connection.clone()],
            version: counterparty_version.to_string(),
        };
        self.verify_channel_state(
            &conn,
            proof_height,
            proof_init,
            &open.counterparty_port,
            &open.counterparty_channel,
            &expected,
            "counterparty INIT",
        )?;
        let end = ChannelEnd {
            state: ChannelState::TryOpen,
            ordering: open.ordering,
            counterparty_port: open.counterparty_port.clone(),
            counterparty_channel: open.counterparty_channel.clone(),
            connection_hops: open.connection_hops.clone(),
            version: open.version.clone(),
        };
        self.write(&paths::channel(&open.port, &open.channel), &end)?;
        let cap = self.new_capability(&channel_cap_path(&open.port, &open.channel));
        self.init_sequences(&open.port, &open.channel)?;
        self.emit(EventKind::ChannelOpenTry { port: open.port.clone(), channel: open.channel.clone() });
        Ok(cap)
    }

    pub fn chan_open_ack(
        &mut self,
        port: &PortId,
        chan: &ChannelId,
        counterparty_version: &str,
        proof_try: &CommitmentProof,
        proof_height: u64,
        cap: &Capability,
    ) -> Result<(), HandlerError> {
        let mut end = self.channel_end(port, chan)?;
        if !matches!(end.state, ChannelState::Init | ChannelState::TryOpen) {
            return Err(ChannelError::BadState(end.state).into());
        }
        self.require_channel_cap(port, chan, cap)?;
        let conn = self.open_connection_for(&end)?;
        let expected = ChannelEnd {
            state: ChannelState::TryOpen,
            ordering: end.ordering,
            counterparty_port: port.clone(),
            counterparty_channel: chan.clone(),
            connection_hops: vec![conn.counterparty_connection.clone()],
            version: counterparty_version.to_string(),
        };
        self.verify_channel_state(
            &conn,
            proof_height,
            proof_try,
            &end.counterparty_port,
            &end.counterparty_channel,
            &expected,
            "counterparty TRYOPEN",
        )?;
        end.state = ChannelState::Open;
        end.version = counterparty_version.to_string();
        self.write(&paths::channel(port, chan), &end)?;
        self.emit(EventKind::ChannelOpened { port: port.clone(), channel: chan.clone() });
        Ok(())
    }

    pub fn chan_open_confirm(
        &mut self,
        port: &PortId,
        chan: &ChannelId,
        proof_ack: &CommitmentProof,
        proof_height: u64,
        cap: &Capability,
    ) -> Result<(), HandlerError> {
        let mut end = self.channel_end(port, chan)?;
        if end.state != ChannelState::TryOpen {
            return Err(ChannelError::BadState(end.state).into());
        }
        self.require_channel_cap(port, chan, cap)?;
        let conn = self.open_connection_for(&end)?;
        let expected = ChannelEnd {
            state: ChannelState::Open,
            ordering: end.ordering,
            counterparty_port: port.clone(),
            counterparty_channel: chan.clone(),
            connection_hops: vec![conn.counterparty_connection.clone()],
            version: end.version.clone(),
        };
        self.verify_channel_state(
            &conn,
            proof_height,
            proof_ack,
            &end.counterparty_port,
            &end.counterparty_channel,
            &expected,
            "counterparty OPEN",
        )?;
        end.state = ChannelState::Open;
        self.write(&paths::channel(port, chan), &end)?;
        self.emit(EventKind::ChannelOpened { port: port.clone(), channel: chan.clone() });
        Ok(())
    }

    pub fn chan_close_init(&mut self, port: &PortId, chan: &ChannelId, cap: &Capability) -> Result<(), HandlerError> {
        self.require_channel_cap(port, chan, cap)?;
        let mut end = self.channel_end(port, chan)?;
        if end.state == ChannelState::Closed {
            return Err(ChannelError::AlreadyClosed.into());
        }
        self.open_connection_for(&end)?;
        end.state = ChannelState::Closed;
        self.write(&paths::channel(port, chan), &end)?;
        self.emit(EventKind::ChannelClosed { port: port.clone(), channel: chan.clone() });
        Ok(())
    }

    pub fn chan_close_confirm(
        &mut self,
        port: &PortId,
        chan: &ChannelId,
        proof_init: &CommitmentProof,
        proof_height: u64,
        cap: &Capability,
    ) -> Result<(), HandlerError> {
        self.require_channel_cap(port, chan, cap)?;
        let mut end = self.channel_end(port, chan)?;
        if end.state == ChannelState::Closed {
            return Err(ChannelError::AlreadyClosed.into());
        }
        let conn = self.open_connection_for(&end)?;
        let expected = ChannelEnd {
            state: ChannelState::Closed,
            ordering: end.ordering,
            counterparty_port: port.clone(),
            counterparty_channel: chan.clone(),
            connection_hops: vec![conn.counterparty_connection.clone()],
            version: end.version.clone(),
        };
        self.verify_channel_state(
            &conn,
            proof_height,
            proof_init,
            &end.counterparty_port,
            &end.counterparty_channel,
            &expected,
            "counterparty CLOSED",
        )?;
        end.state = ChannelState::Closed;
        self.write(&paths::channel(port, chan), &end)?;
        self.emit(EventKind::ChannelClosed { port: port.clone(), channel: chan.clone() });
        Ok(())
    }

    fn check_counterparty(end: &ChannelEnd, port: &PortId, chan: &ChannelId) -> Result<(), HandlerError> {
        if *port != end.counterparty_port || *chan != end.counterparty_channel {
            return Err(ChannelError::WrongCounterparty.into());
        }
        Ok(())
    }

    pub fn send_packet(&mut self, packet: &Packet, cap: &Capability) -> Result<(), HandlerError> {
        let (port, chan) = (&packet.source_port, &packet.source_channel);
        let end = self.channel_end(port, chan)?;
        if end.state == ChannelState::Closed {
            return Err(ChannelError::ChannelClosed.into());
        }
        self.require_channel_cap(port, chan, cap)?;
        Self::check_counterparty(&end, &packet.dest_port, &packet.dest_channel)?;
        let conn = self.connection_for(&end)?;
        let client = self.client_state(&conn.client)?;
        if client.is_frozen() {
            return Err(ChannelError::ClientFrozen.into());
        }
        let client_height = self.client_latest_height(&conn.client)?;
        if packet.timeout_height != 0 && client_height >= packet.timeout_height {
            return Err(ChannelError::TimeoutElapsedOnClient {
                timeout_height: packet.timeout_height,
                client_height,
            }
            .into());
        }
        let next = self.next_sequence_send(port, chan)?;
        if packet.sequence != next {
            return Err(ChannelError::WrongSequence { expected: next, got: packet.sequence }.into());
        }
        self.write(&paths::next_sequence_send(port, chan), &(next + 1))?;
        self.write_raw(&paths::packet_commitment(port, chan, packet.sequence), packet.commitment().0.to_vec())?;
        self.emit(EventKind::SendPacket { packet: packet.clone() });
        Ok(())
    }

    pub fn recv_packet(
        &mut self,
        packet: &Packet,
        proof: &CommitmentProof,
        proof_height: u64,
        ack: &[u8],
        cap: &Capability,
    ) -> Result<(), HandlerError> {
        let (port, chan) = (&packet.dest_port, &packet.dest_channel);
        let end = self.channel_end(port, chan)?;
        if end.state != ChannelState::Open {
            return Err(ChannelError::ChannelNotOpen.into());
        }
        self.require_channel_cap(port, chan, cap)?;
        Self::check_counterparty(&end, &packet.source_port, &packet.source_channel)?;
        if self.read_raw(&paths::packet_ack(port, chan, packet.sequence)).is_some() {
            return Err(ChannelError::DuplicateReceipt(packet.sequence).into());
        }
        let conn = self.open_connection_for(&end)?;
        if packet.timeout_height != 0 && self.height() >= packet.timeout_height {
            return Err(ChannelError::TimedOut.into());
        }
        if packet.timeout_timestamp != 0 && self.timestamp() >= packet.timeout_timestamp {
            return Err(ChannelError::TimedOut.into());
        }
        let ok = self.verify_membership(
            &conn.client,
            proof_height,
            &conn.counterparty_prefix,
            &paths::packet_commitment(&packet.source_port, &packet.source_channel, packet.sequence),
            &packet.commitment().0,
            proof,
        )?;
        if !ok {
            return Err(ChannelError::ProofFailure("packet commitment").into());
        }
        if !ack.is_empty() || end.ordering == Order::Unordered {
            self.write_raw(&paths::packet_ack(port, chan, packet.sequence), commit_ack(ack).0.to_vec())?;
        }
        if end.ordering == Order::Ordered {
            let next = self.next_sequence_recv(port, chan)?;
            if packet.sequence != next {
                return Err(ChannelError::OutOfOrder { expected: next, got: packet.sequence }.into());
            }
            self.write(&paths::next_sequence_recv(port, chan), &(next + 1))?;
        }
        self.emit(EventKind::RecvPacket { packet: packet.clone() });
        if !ack.is_empty() || end.ordering == Order::Unordered {
            self.emit(EventKind::WriteAck { packet: packet.clone(), ack: ack.to_vec() });
        }
        Ok(())
    }

    fn check_commitment(&self, packet: &Packet) -> Result<(), HandlerError> {
        match self.packet_commitment(&packet.source_port, &packet.source_channel, packet.sequence) {
            None => Err(ChannelError::NoCommitment(packet.sequence).into()),
            Some(c) if c != packet.commitment().0 => Err(ChannelError::CommitmentMismatch.into()),
            Some(_) => Ok(()),
        }
    }

    fn delete_commitment(&mut self, packet: &Packet) {
        self.remove(&paths::packet_commitment(&packet.source_port, &packet.source_channel, packet.sequence));
    }

    fn advance_ack_sequence(&mut self, packet: &Packet) -> Result<(), HandlerError> {
        let (port, chan) = (&packet.source_port, &packet.source_channel);
        let next = self.next_sequence_ack(port, chan)?;
        if packet.sequence != next {
            return Err(ChannelError::WrongAckSequence { expected: next, got: packet.sequence }.into());
        }
        self.write(&paths::next_sequence_ack(port, chan), &(next + 1))
    }

    pub fn acknowledge_packet(
        &mut self,
        packet: &Packet,
        ack: &[u8],
        proof: &CommitmentProof,
        proof_height: u64,
        cap: &Capability,
    ) -> Result<(), HandlerError> {
        let (port, chan) = (&packet.source_port, &packet.source_channel);
        let end = self.channel_end(port, chan)?;
        if end.state != ChannelState::Open {
            return Err(ChannelError::ChannelNotOpen.into());
        }
        self.require_channel_cap(port, chan, cap)?;
        Self::check_counterparty(&end, &packet.dest_port, &packet.dest_channel)?;
        let conn = self.open_connection_for(&end)?;
        self.check_commitment(packet)?;
        let ok = self.verify_membership(
            &conn.client,
            proof_height,
            &conn.counterparty_prefix,
            &paths::packet_ack(&packet.dest_port, &packet.dest_channel, packet.sequence),
            &commit_ack(ack).0,
            proof,
        )?;
        if !ok {
            return Err(ChannelError::ProofFailure("acknowledgement").into());
        }
        if end.ordering == Order::Ordered {
            self.advance_ack_sequence(packet)?;
        }
        self.delete_commitment(packet);
        self.emit(EventKind::AcknowledgePacket { packet: packet.clone() });
        Ok(())
    }

    /// Proves the destination has not received `packet` as of `proof_height`.
    fn verify_unreceived(
        &self,
        conn: &ConnectionEnd,
        end: &ChannelEnd,
        packet: &Packet,
        proof: &CommitmentProof,
        proof_height: u64,
        next_sequence_recv: Option<u64>,
    ) -> Result<(), HandlerError> {
        let ok = match end.ordering {
            Order::Ordered => {
                let next = next_sequence_recv.ok_or(ChannelError::MissingNextSequenceRecv)?;
                if next > packet.sequence {
                    return Err(ChannelError::PacketWasReceived.into());
                }
                self.verify_membership(
                    &conn.client,
                    proof_height,
                    &conn.counterparty_prefix,
                    &paths::next_sequence_recv(&packet.dest_port, &packet.dest_channel),
                    &next.to_bytes(),
                    proof,
                )?
            }
            Order::Unordered => self.verify_non_membership(
                &conn.client,
                proof_height,
                &conn.counterparty_prefix,
                &paths::packet_ack(&packet.dest_port, &packet.dest_channel, packet.sequence),
                proof,
            )?,
        };
        if ok {
            Ok(())
        } else {
            Err(ChannelError::ProofFailure("non-receipt").into())
        }
    }

    pub fn timeout_packet(
        &mut self,
        packet: &Packet,
        proof: &CommitmentProof,
        proof_height: u64,
        next_sequence_recv: Option<u64>,
        cap: &Capability,
    ) -> Result<(), HandlerError> {
        let (port, chan) = (&packet.source_port, &packet.source_channel);
        let mut end = self.channel_end(port, chan)?;
        if end.state != ChannelState::Open {
            return Err(ChannelError::ChannelNotOpen.into());
        }
        self.require_channel_cap(port, chan, cap)?;
        Self::check_counterparty(&end, &packet.dest_port, &packet.dest_channel)?;
        let conn = self.connection_for(&end)?;
        let height_passed = packet.timeout_height > 0 && proof_height >= packet.timeout_height;
        let time_passed = packet.timeout_timestamp > 0
            && self.client_timestamp_at(&conn.client, proof_height)? > packet.timeout_timestamp;
        if !(height_passed || time_passed) {
            return Err(ChannelError::NotYetTimedOut.into());
        }
        self.check_commitment(packet)?;
        self.verify_unreceived(&conn, &end, packet, proof, proof_height, next_sequence_recv)?;
        self.delete_commitment(packet);
        self.emit(EventKind::TimeoutPacket { packet: packet.clone(), on_close: false });
        if end.ordering == Order::Ordered {
            end.state = ChannelState::Closed;
            self.write(&paths::channel(port, chan), &end)?;
            self.emit(EventKind::ChannelClosed { port: port.clone(), channel: chan.clone() });
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn timeout_on_close(
        &mut self,
        packet: &Packet,
        proof_closed: &CommitmentProof,
        proof_unreceived: &CommitmentProof,
        proof_height: u64,
        next_sequence_recv: Option<u64>,
        cap: &Capability,
    ) -> Result<(), HandlerError> {
        let (port, chan) = (&packet.source_port, &packet.source_channel);
        let end = self.channel_end(port, chan)?;
        self.require_channel_cap(port, chan, cap)?;
        Self::check_counterparty(&end, &packet.dest_port, &packet.dest_channel)?;
        let conn = self.connection_for(&end)?;
        self.check_commitment(packet)?;
        let expected = ChannelEnd {
            state: ChannelState::Closed,
            ordering: end.ordering,
            counterparty_port: port.clone(),
            counterparty_channel: chan.clone(),
            connection_hops: vec![conn.counterparty_connection.clone()],
            version: end.version.clone(),
        };
        let closed = self.verify_membership(
            &conn.client,
            proof_height,
            &conn.counterparty_prefix,
            &paths::channel(&packet.dest_port, &packet.dest_channel),
            &expected.to_bytes(),
            proof_closed,
        )?;
        if !closed {
            return Err(ChannelError::ChannelNotClosed.into());
        }
        self.verify_unreceived(&conn, &end, packet, proof_unreceived, proof_height, next_sequence_recv)?;
        self.delete_commitment(packet);
        self.emit(EventKind::TimeoutPacket { packet: packet.clone(), on_close: true });
        Ok(())
    }

    pub fn cleanup_packet(
        &mut self,
        packet: &Packet,
        proof: &CommitmentProof,
        proof_height: u64,
        witness: &CleanupWitness,
        cap: &Capability,
    ) -> Result<(), HandlerError> {
        let (port, chan) = (&packet.source_port, &packet.source_channel);
        let end = self.channel_end(port, chan)?;
        if end.state != ChannelState::Open {
            return Err(ChannelError::ChannelNotOpen.into());
        }
        self.require_channel_cap(port, chan, cap)?;
        Self::check_counterparty(&end, &packet.dest_port, &packet.dest_channel)?;
        let conn = self.connection_for(&end)?;
        self.check_commitment(packet)?;
        let ok = match (end.ordering, witness) {
            (Order::Ordered, CleanupWitness::NextSequenceRecv(next)) => {
                if *next <= packet.sequence {
                    return Err(ChannelError::NotYetProcessed.into());
                }
                self.verify_membership(
                    &conn.client,
                    proof_height,
                    &conn.counterparty_prefix,
                    &paths::next_sequence_recv(&packet.dest_port, &packet.dest_channel),
                    &next.to_bytes(),
                    proof,
                )?
            }
            (Order::Unordered, CleanupWitness::Acknowledgement(ack)) => self.verify_membership(
                &conn.client,
                proof_height,
                &conn.counterparty_prefix,
                &paths::packet_ack(&packet.dest_port, &packet.dest_channel, packet.sequence),
                &commit_ack(ack).0,
                proof,
            )?,
            _ => return Err(ChannelError::WrongWitness.into()),
        };
        if !ok {
            return Err(ChannelError::ProofFailure("destination processing").into());
        }
        if end.ordering == Order::Ordered {
            self.advance_ack_sequence(packet)?;
        }
        self.delete_commitment(packet);
        self.emit(EventKind::CleanupPacket { packet: packet.clone() });
        Ok(())
    }
}
