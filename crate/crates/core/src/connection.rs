//! Connection ends and the four-step opening handshake.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ClientType;
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::events::EventKind;
use crate::ident::{ClientId, ConnectionId};
use crate::ledger::{HandlerError, Ledger};
use crate::paths;
use crate::store::{CommitmentPrefix, CommitmentProof};

pub const COMPATIBLE_VERSIONS: &[&str] = &["ibc-1"];

pub fn compatible_versions() -> Vec<String> {
    COMPATIBLE_VERSIONS.iter().map(|v| v.to_string()).collect()
}

/// First version we support, in the counterparty's preference order.
pub fn pick_version(counterparty: &[String]) -> Option<String> {
    counterparty.iter().find(|v| COMPATIBLE_VERSIONS.contains(&v.as_str())).cloned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConnectionState {
    Init,
    TryOpen,
    Open,
}

impl Canonical for ConnectionState {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self {
            ConnectionState::Init => 1,
            ConnectionState::TryOpen => 2,
            ConnectionState::Open => 3,
        });
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            1 => Ok(ConnectionState::Init),
            2 => Ok(ConnectionState::TryOpen),
            3 => Ok(ConnectionState::Open),
            tag => Err(DecodeError::BadTag { what: "connection state", tag }),
        }
    }
}

/// One end of a connection. `versions` holds the offered list while INIT and
/// the single agreed version afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionEnd {
    pub state: ConnectionState,
    pub counterparty_connection: ConnectionId,
    pub counterparty_prefix: CommitmentPrefix,
    pub client: ClientId,
    pub counterparty_client: ClientId,
    pub versions: Vec<String>,
}

impl ConnectionEnd {
    pub fn version(&self) -> Option<&str> {
        match self.versions.as_slice() {
            [v] => Some(v),
            _ => None,
        }
    }
}

impl Canonical for ConnectionEnd {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.state)
            .put(&self.counterparty_connection)
            .put(&self.counterparty_prefix)
            .put(&self.client)
            .put(&self.counterparty_client)
            .list(&self.versions);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(ConnectionEnd {
            state: dec.get()?,
            counterparty_connection: dec.get()?,
            counterparty_prefix: dec.get()?,
            client: dec.get()?,
            counterparty_client: dec.get()?,
            versions: dec.list()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConnectionError {
    #[error("connection {0} already exists")]
    IdentifierInUse(ConnectionId),
    #[error("no connection {0}")]
    NoSuchConnection(ConnectionId),
    #[error("no client {0}")]
    NoSuchClient(ClientId),
    #[error("consensus height {consensus} above current height {current}")]
    FutureConsensusHeight { consensus: u64, current: u64 },
    #[error("own consensus state at {0} no longer retained")]
    ConsensusStatePruned(u64),
    #[error("proof of {0} failed")]
    ProofFailure(&'static str),
    #[error("no compatible version")]
    IncompatibleVersion,
    #[error("existing connection end conflicts with the handshake")]
    ConflictingPriorState,
    #[error("connection {connection} is {state:?}")]
    BadState { connection: ConnectionId, state: ConnectionState },
}

impl Ledger {
    pub fn connection_end(&self, conn: &ConnectionId) -> Result<ConnectionEnd, HandlerError> {
        self.read(&paths::connection(conn))?
            .ok_or_else(|| ConnectionError::NoSuchConnection(conn.clone()).into())
    }

    /// All connection identifiers in the working state.
    pub fn connection_ids(&self) -> Vec<ConnectionId> {
        self.paths_with_prefix(paths::CONNECTIONS_PREFIX)
            .iter()
            .filter_map(|p| ConnectionId::new(&p[paths::CONNECTIONS_PREFIX.len()..]).ok())
            .collect()
    }

    fn verify_connection_state(
        &self,
        conn: &ConnectionEnd,
        height: u64,
        proof: &CommitmentProof,
        counterparty: &ConnectionId,
        expected: &ConnectionEnd,
        what: &'static str,
    ) -> Result<(), HandlerError> {
        let ok = self.verify_membership(
            &conn.client,
            height,
            &conn.counterparty_prefix,
            &paths::connection(counterparty),
            &expected.to_bytes(),
            proof,
        )?;
        if ok {
            Ok(())
        } else {
            Err(ConnectionError::ProofFailure(what).into())
        }
    }

    /// The counterparty's client of us holds our own consensus state at
    /// `consensus_height`, byte for byte.
    fn verify_client_consensus_state(
        &self,
        conn: &ConnectionEnd,
        height: u64,
        proof: &CommitmentProof,
        consensus_height: u64,
    ) -> Result<(), HandlerError> {
        if self.client_state(&conn.client)?.client_type == ClientType::Loopback {
            return Ok(());
        }
        let current = self.height();
        if consensus_height > current {
            return Err(ConnectionError::FutureConsensusHeight { consensus: consensus_height, current }.into());
        }
        let own = self
            .query_consensus_state_at(consensus_height)
            .map_err(|_| ConnectionError::ConsensusStatePruned(consensus_height))?;
        let ok = self.verify_membership(
            &conn.client,
            height,
            &conn.counterparty_prefix,
            &paths::consensus_state(&conn.counterparty_client, consensus_height),
            &own.to_bytes(),
            proof,
        )?;
        if ok {
            Ok(())
        } else {
            Err(ConnectionError::ProofFailure("counterparty consensus state").into())
        }
    }

    pub fn conn_open_init(
        &mut self,
        conn: &ConnectionId,
        desired_counterparty: &ConnectionId,
        counterparty_prefix: &CommitmentPrefix,
        client: &ClientId,
        counterparty_client: &ClientId,
    ) -> Result<(), HandlerError> {
        if self.read_raw(&paths::connection(conn)).is_some() {
            return Err(ConnectionError::IdentifierInUse(conn.clone()).into());
        }
        if self.read_raw(&paths::client_state(client)).is_none() {
            return Err(ConnectionError::NoSuchClient(client.clone()).into());
        }
        let end = ConnectionEnd {
            state: ConnectionState::Init,
            counterparty_connection: desired_counterparty.clone(),
            counterparty_prefix: counterparty_prefix.clone(),
            client: client.clone(),
            counterparty_client: counterparty_client.clone(),
            versions: compatible_versions(),
        };
        self.write(&paths::connection(conn), &end)?;
        self.emit(EventKind::ConnectionOpenInit { connection: conn.clone() });
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conn_open_try(
        &mut self,
        desired: &ConnectionId,
        counterparty_connection: &ConnectionId,
        counterparty_prefix: &CommitmentPrefix,
        counterparty_client: &ClientId,
        client: &ClientId,
        counterparty_versions: &[String],
        proof_init: &CommitmentProof,
        proof_consensus: &CommitmentProof,
        proof_height: u64,
        consensus_height: u64,
    ) -> Result<(), HandlerError> {
        let current = self.height();
        if consensus_height > current {
            return Err(ConnectionError::FutureConsensusHeight { consensus: consensus_height, current }.into());
        }
        if self.read_raw(&paths::client_state(client)).is_none() {
            return Err(ConnectionError::NoSuchClient(client.clone()).into());
        }
        let expected = ConnectionEnd {
            state: ConnectionState::Init,
            counterparty_connection: desired.clone(),
            counterparty_prefix: self.prefix().clone(),
            client: counterparty_client.clone(),
            counterparty_client: client.clone(),
            versions: counterparty_versions.to_vec(),
        };
        let version = pick_version(counterparty_versions).ok_or(ConnectionError::IncompatibleVersion)?;
        let end = ConnectionEnd {
            state: ConnectionState::TryOpen,
            counterparty_connection: counterparty_connection.clone(),
            counterparty_prefix: counterparty_prefix.clone(),
            client: client.clone(),
            counterparty_client: counterparty_client.clone(),
            versions: vec![version],
        };
        self.verify_connection_state(&end, proof_height, proof_init, counterparty_connection, &expected, "counterparty INIT")?;
        self.verify_client_consensus_state(&end, proof_height, proof_consensus, consensus_height)?;
        if let Some(prev) = self.read::<ConnectionEnd>(&paths::connection(desired))? {
            let crossing = prev.state == ConnectionState::Init
                && prev.counterparty_connection == end.counterparty_connection
                && prev.counterparty_prefix == end.counterparty_prefix
                && prev.client == end.client
                && prev.counterparty_client == end.counterparty_client
                && prev.versions == end.versions;
            if !crossing {
                return Err(ConnectionError::ConflictingPriorState.into());
            }
        }
        self.write(&paths::connection(desired), &end)?;
        self.emit(EventKind::ConnectionOpenTry { connection: desired.clone() });
        Ok(())
    }

    pub fn conn_open_ack(
        &mut self,
        conn: &ConnectionId,
        version: &str,
        proof_try: &CommitmentProof,
        proof_consensus: &CommitmentProof,
        proof_height: u64,
        consensus_height: u64,
    ) -> Result<(), HandlerError> {
        let current = self.height();
        if consensus_height > current {
            return Err(ConnectionError::FutureConsensusHeight { consensus: consensus_height, current }.into());
        }
        let mut end = self.connection_end(conn)?;
        if !matches!(end.state, ConnectionState::Init | ConnectionState::TryOpen) {
            return Err(ConnectionError::BadState { connection: conn.clone(), state: end.state }.into());
        }
        let expected = ConnectionEnd {
            state: ConnectionState::TryOpen,
            counterparty_connection: conn.clone(),
            counterparty_prefix: self.prefix().clone(),
            client: end.counterparty_client.clone(),
            counterparty_client: end.client.clone(),
            versions: vec![version.to_string()],
        };
        let cp = end.counterparty_connection.clone();
        self.verify_connection_state(&end, proof_height, proof_try, &cp, &expected, "counterparty TRYOPEN")?;
        self.verify_client_consensus_state(&end, proof_height, proof_consensus, consensus_height)?;
        if !COMPATIBLE_VERSIONS.contains(&version) {
            return Err(ConnectionError::IncompatibleVersion.into());
        }
        end.state = ConnectionState::Open;
        end.versions = vec![version.to_string()];
        self.write(&paths::connection(conn), &end)?;
        self.emit(EventKind::ConnectionOpenAck { connection: conn.clone() });
        Ok(())
    }

    pub fn conn_open_confirm(
        &mut self,
        conn: &ConnectionId,
        proof_ack: &CommitmentProof,
        proof_height: u64,
    ) -> Result<(), HandlerError> {
        let mut end = self.connection_end(conn)?;
        if end.state != ConnectionState::TryOpen {
            return Err(ConnectionError::BadState { connection: conn.clone(), state: end.state }.into());
        }
        let expected = ConnectionEnd {
            state: ConnectionState::Open,
            counterparty_connection: conn.clone(),
            counterparty_prefix: self.prefix().clone(),
            client: end.counterparty_client.clone(),
            counterparty_client: end.client.clone(),
            versions: end.versions.clone(),
        };
        let cp = end.counterparty_connection.clone();
        self.verify_connection_state(&end, proof_height, proof_ack, &cp, &expected, "counterparty OPEN")?;
        end.state = ConnectionState::Open;
        self.write(&paths::connection(conn), &end)?;
        self.emit(EventKind::ConnectionOpenConfirm { connection: conn.clone() });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_negotiation() {
        assert_eq!(pick_version(&["x".into(), "ibc-1".into()]).as_deref(), Some("ibc-1"));
        assert_eq!(pick_version(&["x".into()]), None);
        assert_eq!(pick_version(&[]), None);
    }

    #[test]
    fn end_roundtrip() {
        let end = ConnectionEnd {
            state: ConnectionState::TryOpen,
            counterparty_connection: ConnectionId::new("conn-b").unwrap(),
            counterparty_prefix: CommitmentPrefix::default(),
            client: ClientId::new("client-a").unwrap(),
            counterparty_client: ClientId::new("client-b").unwrap(),
            versions: vec!["ibc-1".into()],
        };
        assert_eq!(ConnectionEnd::from_bytes(&end.to_bytes()).unwrap(), end);
    }
}
