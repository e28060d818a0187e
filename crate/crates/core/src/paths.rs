//! Store paths for the inter-ledger sub-store. These are relative to the
//! ledger's commitment prefix.

use crate::ident::{ChannelId, ClientId, ConnectionId, PortId};

pub fn client_state(client: &ClientId) -> String {
    format!("clients/{client}")
}

pub fn consensus_state(client: &ClientId, height: u64) -> String {
    format!("clients/{client}/consensusStates/{height}")
}

pub fn connection(conn: &ConnectionId) -> String {
    format!("connections/{conn}")
}

pub fn channel(port: &PortId, chan: &ChannelId) -> String {
    format!("channelEnds/ports/{port}/channels/{chan}")
}

pub fn next_sequence_send(port: &PortId, chan: &ChannelId) -> String {
    format!("nextSequenceSend/ports/{port}/channels/{chan}")
}

pub fn next_sequence_recv(port: &PortId, chan: &ChannelId) -> String {
    format!("nextSequenceRecv/ports/{port}/channels/{chan}")
}

pub fn next_sequence_ack(port: &PortId, chan: &ChannelId) -> String {
    format!("nextSequenceAck/ports/{port}/channels/{chan}")
}

pub fn packet_commitment(port: &PortId, chan: &ChannelId, seq: u64) -> String {
    format!("commitments/ports/{port}/channels/{chan}/sequences/{seq}")
}

pub fn packet_commitments_prefix(port: &PortId, chan: &ChannelId) -> String {
    format!("commitments/ports/{port}/channels/{chan}/sequences/")
}

pub fn packet_ack(port: &PortId, chan: &ChannelId, seq: u64) -> String {
    format!("acks/ports/{port}/channels/{chan}/sequences/{seq}")
}

pub const CONNECTIONS_PREFIX: &str = "connections/";
pub const CHANNELS_PREFIX: &str = "channelEnds/ports/";
pub const CLIENTS_PREFIX: &str = "clients/";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts() {
        let p = PortId::new("transfer").unwrap();
        let c = ChannelId::new("ch-0").unwrap();
        assert_eq!(packet_commitment(&p, &c, 7), "commitments/ports/transfer/channels/ch-0/sequences/7");
        assert_eq!(packet_ack(&p, &c, 1), "acks/ports/transfer/channels/ch-0/sequences/1");
        assert_eq!(next_sequence_recv(&p, &c), "nextSequenceRecv/ports/transfer/channels/ch-0");
        assert_eq!(
            consensus_state(&ClientId::new("b").unwrap(), 3),
            "clients/b/consensusStates/3"
        );
    }
}
