//! Events emitted by committed transactions. They are the relayers' view of
//! what happened on a ledger and carry full packet contents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::Packet;
use crate::ident::{ChannelId, ClientId, ConnectionId, PortId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Height of the block that includes the emitting transaction.
    pub height: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    CreateClient { client: ClientId },
    UpdateClient { client: ClientId, height: u64 },
    ClientFrozen { client: ClientId, height: u64 },
    ConnectionOpenInit { connection: ConnectionId },
    ConnectionOpenTry { connection: ConnectionId },
    ConnectionOpenAck { connection: ConnectionId },
    ConnectionOpenConfirm { connection: ConnectionId },
    ChannelOpenInit { port: PortId, channel: ChannelId },
    ChannelOpenTry { port: PortId, channel: ChannelId },
    ChannelOpened { port: PortId, channel: ChannelId },
    ChannelClosed { port: PortId, channel: ChannelId },
    SendPacket { packet: Packet },
    RecvPacket { packet: Packet },
    WriteAck {
        packet: Packet,
        #[serde(with = "crate::serde_hex")]
        ack: Vec<u8>,
    },
    AcknowledgePacket { packet: Packet },
    TimeoutPacket { packet: Packet, on_close: bool },
    CleanupPacket { packet: Packet },
    App { module: String, action: String, attributes: BTreeMap<String, String> },
}
