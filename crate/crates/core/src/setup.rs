//! Helpers that build a topology: clients, connections and channels driven
//! to OPEN by a relayer.

use thiserror::Error;

use crate::channel::{ChannelOpen, ChannelState, Order};
use crate::client::{ClientState, ClientType, ConsensusState};
use crate::connection::ConnectionState;
use crate::ident::{ChannelId, ClientId, ConnectionId, LedgerId, PortId};
use crate::ledger::TxError;
use crate::relayer::{Network, Relayer, SubmissionReport};
use crate::router::{Datagram, TxReceipt};
use crate::store::CommitmentRoot;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SetupError {
    #[error(transparent)]
    Tx(#[from] TxError),
    #[error("{what} not open after {steps} steps")]
    Stalled { what: String, steps: usize },
}

/// Creates `client` on `host` tracking `counterparty` at its current tip.
/// A ledger tracking itself gets a loopback client.
pub fn create_client(
    net: &mut Network,
    host: &LedgerId,
    counterparty: &LedgerId,
    client: &ClientId,
    trusting_period: u64,
) -> Result<TxReceipt, TxError> {
    let cp = net.ledger(counterparty);
    let (state, consensus) = if host == counterparty {
        let consensus = ConsensusState {
            client_type: ClientType::Loopback,
            height: cp.height(),
            root: CommitmentRoot::empty(),
            timestamp: cp.timestamp(),
            signer: Vec::new(),
        };
        (ClientState { client_type: ClientType::Loopback, latest_height: 0, frozen_height: 0, trusting_period }, consensus)
    } else {
        let consensus = cp.query_consensus_state_at(cp.height()).expect("tip retained");
        let state = ClientState {
            client_type: cp.self_client_type(),
            latest_height: cp.height(),
            frozen_height: 0,
            trusting_period,
        };
        (state, consensus)
    };
    net.ledger_mut(host).execute_transaction(&[Datagram::ClientCreate { client: client.clone(), state, consensus }])
}

/// One scheduler round: a block on every live ledger, then each relayer once.
pub fn step(net: &mut Network, relayers: &mut [Relayer]) -> Vec<SubmissionReport> {
    net.produce_blocks();
    relayers.iter_mut().map(|r| r.relay_once(net)).collect()
}

fn drive(
    net: &mut Network,
    relayers: &mut [Relayer],
    max_steps: usize,
    what: &str,
    done: impl Fn(&Network) -> bool,
) -> Result<(), SetupError> {
    for _ in 0..max_steps {
        if done(net) {
            return Ok(());
        }
        step(net, relayers);
    }
    if done(net) {
        Ok(())
    } else {
        Err(SetupError::Stalled { what: what.to_string(), steps: max_steps })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionSpec {
    pub a: LedgerId,
    pub a_client: ClientId,
    pub a_connection: ConnectionId,
    pub b: LedgerId,
    pub b_client: ClientId,
    pub b_connection: ConnectionId,
}

/// Submits the init on side a and relays until both ends are OPEN.
pub fn open_connection(
    net: &mut Network,
    relayers: &mut [Relayer],
    spec: &ConnectionSpec,
    max_steps: usize,
) -> Result<(), SetupError> {
    let prefix = net.ledger(&spec.b).prefix().clone();
    net.ledger_mut(&spec.a).execute_transaction(&[Datagram::ConnOpenInit {
        connection: spec.a_connection.clone(),
        counterparty_connection: spec.b_connection.clone(),
        counterparty_prefix: prefix,
        client: spec.a_client.clone(),
        counterparty_client: spec.b_client.clone(),
    }])?;
    drive(net, relayers, max_steps, &format!("connection {}", spec.a_connection), |n| {
        let open = |l: &LedgerId, c: &ConnectionId| {
            n.ledger(l).connection_end(c).is_ok_and(|e| e.state == ConnectionState::Open)
        };
        open(&spec.a, &spec.a_connection) && open(&spec.b, &spec.b_connection)
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSpec {
    pub a: LedgerId,
    pub a_port: PortId,
    pub a_channel: ChannelId,
    pub a_connection: ConnectionId,
    pub b: LedgerId,
    pub b_port: PortId,
    pub b_channel: ChannelId,
    pub ordering: Order,
    pub version: String,
}

/// Submits the channel init on side a and relays until both ends are OPEN.
pub fn open_channel(
    net: &mut Network,
    relayers: &mut [Relayer],
    spec: &ChannelSpec,
    max_steps: usize,
) -> Result<(), SetupError> {
    net.ledger_mut(&spec.a).execute_transaction(&[Datagram::ChanOpenInit(ChannelOpen {
        ordering: spec.ordering,
        connection_hops: vec![spec.a_connection.clone()],
        port: spec.a_port.clone(),
        channel: spec.a_channel.clone(),
        counterparty_port: spec.b_port.clone(),
        counterparty_channel: spec.b_channel.clone(),
        version: spec.version.clone(),
    })])?;
    drive(net, relayers, max_steps, &format!("channel {}", spec.a_channel), |n| {
        let open = |l: &LedgerId, p: &PortId, c: &ChannelId| {
            n.ledger(l).channel_end(p, c).is_ok_and(|e| e.state == ChannelState::Open)
        };
        open(&spec.a, &spec.a_port, &spec.a_channel) && open(&spec.b, &spec.b_port, &spec.b_channel)
    })
}
