//! Scenario documents: topology, relayers, genesis balances, timed actions
//! and the checks to run. JSON, see `docs/scenario.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ibcsim_core::channel::Order;
use ibcsim_core::ident::{ChannelId, ClientId, ConnectionId, LedgerId, PortId};
use ibcsim_core::relayer::RelayerConfig;
use ibcsim_core::transfer;
use primitive_types::U256;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checks::Check;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario invalid at {location}: {message}")]
    Invalid { location: String, message: String },
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { location: location.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerSpec {
    pub id: LedgerId,
    #[serde(default = "default_signers")]
    pub signers: usize,
    /// Seconds per block.
    #[serde(default = "default_block_time")]
    pub block_time: u64,
}

fn default_signers() -> usize {
    4
}

fn default_block_time() -> u64 {
    5
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub host: LedgerId,
    pub counterparty: LedgerId,
    pub id: ClientId,
    #[serde(default = "default_trusting_period")]
    pub trusting_period: u64,
}

fn default_trusting_period() -> u64 {
    100_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionSpec {
    pub a: LedgerId,
    pub a_client: ClientId,
    pub a_connection: ConnectionId,
    pub b: LedgerId,
    pub b_client: ClientId,
    pub b_connection: ConnectionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub a: LedgerId,
    pub a_connection: ConnectionId,
    pub a_channel: ChannelId,
    #[serde(default = "transfer::transfer_port")]
    pub a_port: PortId,
    pub b: LedgerId,
    pub b_channel: ChannelId,
    #[serde(default = "transfer::transfer_port")]
    pub b_port: PortId,
    #[serde(default = "default_order")]
    pub ordering: Order,
}

fn default_order() -> Order {
    Order::Unordered
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Allocation {
    pub ledger: LedgerId,
    pub account: String,
    pub denom: String,
    #[serde(with = "dec_u256")]
    pub amount: U256,
}

pub(crate) mod dec_u256 {
    use primitive_types::U256;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &U256, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<U256, D::Error> {
        let s = String::deserialize(d)?;
        U256::from_dec_str(&s).map_err(|e| serde::de::Error::custom(format!("bad amount {s:?}: {e:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Transfer {
        ledger: LedgerId,
        channel: ChannelId,
        #[serde(default = "transfer::transfer_port")]
        port: PortId,
        denom: String,
        #[serde(with = "dec_u256")]
        amount: U256,
        sender: String,
        receiver: String,
        /// Destination blocks from now after which the packet times out.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_blocks: Option<u64>,
        /// Destination seconds from now after which the packet times out.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<u64>,
    },
    Halt {
        ledger: LedgerId,
    },
    Resume {
        ledger: LedgerId,
    },
    CloseChannel {
        ledger: LedgerId,
        channel: ChannelId,
        #[serde(default = "transfer::transfer_port")]
        port: PortId,
    },
    /// The ledger mints unbacked vouchers, as a faulty ledger would.
    ByzantineMint {
        ledger: LedgerId,
        channel: ChannelId,
        #[serde(default = "transfer::transfer_port")]
        port: PortId,
        account: String,
        denom: String,
        #[serde(with = "dec_u256")]
        amount: U256,
    },
    /// The ledger's next block is accompanied by a conflicting signed block.
    Equivocate {
        ledger: LedgerId,
    },
}

impl Action {
    pub fn ledger(&self) -> &LedgerId {
        match self {
            Action::Transfer { ledger, .. }
            | Action::Halt { ledger }
            | Action::Resume { ledger }
            | Action::CloseChannel { ledger, .. }
            | Action::ByzantineMint { ledger, .. }
            | Action::Equivocate { ledger } => ledger,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Action::Transfer { .. } => "transfer",
            Action::Halt { .. } => "halt",
            Action::Resume { .. } => "resume",
            Action::CloseChannel { .. } => "close_channel",
            Action::ByzantineMint { .. } => "byzantine_mint",
            Action::Equivocate { .. } => "equivocate",
        }
    }
}

// No deny_unknown_fields here: serde cannot combine it with flatten. The
// flattened action still rejects unknown keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedAction {
    pub step: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    pub ledgers: Vec<LedgerSpec>,
    #[serde(default)]
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub connections: Vec<ConnectionSpec>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub relayers: Vec<RelayerConfig>,
    #[serde(default)]
    pub genesis: Vec<Allocation>,
    #[serde(default)]
    pub actions: Vec<TimedAction>,
    /// Empty runs every check.
    #[serde(default)]
    pub checks: Vec<Check>,
}

fn default_max_steps() -> u64 {
    200
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn checks(&self) -> Vec<Check> {
        if self.checks.is_empty() {
            Check::ALL.to_vec()
        } else {
            self.checks.clone()
        }
    }

    /// Last step with an action, 0 if none.
    pub fn last_action_step(&self) -> u64 {
        self.actions.iter().map(|a| a.step).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut ledgers = BTreeSet::new();
        for (i, l) in self.ledgers.iter().enumerate() {
            if !ledgers.insert(&l.id) {
                return Err(invalid(format!("ledgers[{i}]"), format!("duplicate ledger {}", l.id)));
            }
            if l.signers == 0 {
                return Err(invalid(format!("ledgers[{i}].signers"), "need at least one signer"));
            }
        }
        let known = |loc: String, id: &LedgerId| {
            if ledgers.contains(id) {
                Ok(())
            } else {
                Err(invalid(loc, format!("unknown ledger {id}")))
            }
        };
        let mut clients: BTreeMap<(&LedgerId, &ClientId), &LedgerId> = BTreeMap::new();
        for (i, c) in self.clients.iter().enumerate() {
            known(format!("clients[{i}].host"), &c.host)?;
            known(format!("clients[{i}].counterparty"), &c.counterparty)?;
            if clients.insert((&c.host, &c.id), &c.counterparty).is_some() {
                return Err(invalid(format!("clients[{i}].id"), format!("duplicate client {}", c.id)));
            }
        }
        let client_tracks = |loc: String, host: &LedgerId, client: &ClientId, other: &LedgerId| match clients
            .get(&(host, client))
        {
            Some(t) if *t == other => Ok(()),
            Some(t) => Err(invalid(loc, format!("client {client} on {host} tracks {t}, not {other}"))),
            None => Err(invalid(loc, format!("no client {client} on {host}"))),
        };
        let mut conns = BTreeMap::new();
        for (i, c) in self.connections.iter().enumerate() {
            client_tracks(format!("connections[{i}].a_client"), &c.a, &c.a_client, &c.b)?;
            client_tracks(format!("connections[{i}].b_client"), &c.b, &c.b_client, &c.a)?;
            for key in [(&c.a, &c.a_connection), (&c.b, &c.b_connection)] {
                if conns.insert(key, (i, c)).is_some() && c.a != c.b {
                    return Err(invalid(format!("connections[{i}]"), format!("duplicate connection {}", key.1)));
                }
            }
        }
        let mut chans = BTreeSet::new();
        for (i, c) in self.channels.iter().enumerate() {
            let Some((_, conn)) = conns.get(&(&c.a, &c.a_connection)) else {
                return Err(invalid(format!("channels[{i}].a_connection"), format!("no connection {} on {}", c.a_connection, c.a)));
            };
            let b_side = if conn.a == c.a && conn.a_connection == c.a_connection { &conn.b } else { &conn.a };
            if *b_side != c.b {
                return Err(invalid(format!("channels[{i}].b"), format!("connection {} does not reach {}", c.a_connection, c.b)));
            }
            for key in [(c.a.clone(), c.a_port.clone(), c.a_channel.clone()), (c.b.clone(), c.b_port.clone(), c.b_channel.clone())] {
                if !chans.insert(key.clone()) {
                    return Err(invalid(format!("channels[{i}]"), format!("duplicate channel {}/{}", key.1, key.2)));
                }
            }
        }
        for (i, r) in self.relayers.iter().enumerate() {
            client_tracks(format!("relayers[{i}].a.client"), &r.a.ledger, &r.a.client, &r.b.ledger)?;
            client_tracks(format!("relayers[{i}].b.client"), &r.b.ledger, &r.b.client, &r.a.ledger)?;
            if r.poll_every == 0 {
                return Err(invalid(format!("relayers[{i}].poll_every"), "must be at least 1"));
            }
        }
        for (i, g) in self.genesis.iter().enumerate() {
            known(format!("genesis[{i}].ledger"), &g.ledger)?;
            if g.denom.contains('/') || !transfer::valid_denom(&g.denom) {
                return Err(invalid(format!("genesis[{i}].denom"), "genesis denoms must be plain base denoms"));
            }
            if !transfer::valid_account(&g.account) {
                return Err(invalid(format!("genesis[{i}].account"), format!("invalid account {:?}", g.account)));
            }
        }
        let mut prev = 0;
        for (i, a) in self.actions.iter().enumerate() {
            let loc = format!("actions[{i}]");
            if a.step < prev {
                return Err(invalid(loc, "actions must be sorted by step"));
            }
            if a.step == 0 || a.step > self.max_steps {
                return Err(invalid(loc, format!("step must be in 1..={}", self.max_steps)));
            }
            prev = a.step;
            known(format!("{loc}.ledger"), a.action.ledger())?;
            match &a.action {
                Action::Transfer { ledger, port, channel, .. }
                | Action::CloseChannel { ledger, port, channel }
                | Action::ByzantineMint { ledger, port, channel, .. }
                    if !chans.contains(&(ledger.clone(), port.clone(), channel.clone())) =>
                {
                    return Err(invalid(format!("{loc}.channel"), format!("no channel {port}/{channel} on {ledger}")));
                }
                _ => {}
            }
            if let Action::ByzantineMint { denom, .. } = &a.action {
                if !denom.contains('/') {
                    return Err(invalid(format!("{loc}.denom"), "byzantine mints create vouchers, not base denoms"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::{json, Value};

    fn base() -> Value {
        json!({
            "ledgers": [{"id": "a"}, {"id": "b", "signers": 2}],
            "clients": [
                {"host": "a", "counterparty": "b", "id": "client-b"},
                {"host": "b", "counterparty": "a", "id": "client-a"}
            ],
            "connections": [{
                "a": "a", "a_client": "client-b", "a_connection": "conn-0",
                "b": "b", "b_client": "client-a", "b_connection": "conn-0"
            }],
            "channels": [{"a": "a", "a_connection": "conn-0", "a_channel": "ch-0", "b": "b", "b_channel": "ch-0"}],
            "relayers": [{"id": "r", "a": {"ledger": "a", "client": "client-b"}, "b": {"ledger": "b", "client": "client-a"}}],
            "genesis": [{"ledger": "a", "account": "alice", "denom": "atom", "amount": "115792089237316195423570985008687907853269984665640564039457584007913129639935"}],
            "actions": [
                {"step": 2, "action": "transfer", "ledger": "a", "channel": "ch-0", "denom": "atom", "amount": "5",
                 "sender": "alice", "receiver": "bob", "timeout_blocks": 10},
                {"step": 3, "action": "halt", "ledger": "b"}
            ]
        })
    }

    fn parse(v: &Value) -> Result<Scenario, ScenarioError> {
        Scenario::from_json(&v.to_string())
    }

    fn invalid_at(v: &Value) -> String {
        match parse(v) {
            Err(ScenarioError::Invalid { location, .. }) => location,
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn defaults_fill_in() {
        let s = parse(&base()).unwrap();
        assert_eq!(s.max_steps, 200);
        assert_eq!((s.ledgers[0].signers, s.ledgers[0].block_time), (4, 5));
        assert_eq!(s.ledgers[1].signers, 2);
        assert_eq!(s.channels[0].a_port.as_str(), "transfer");
        assert_eq!(s.channels[0].ordering, Order::Unordered);
        assert_eq!(s.clients[0].trusting_period, 100_000);
        assert_eq!(s.genesis[0].amount, U256::MAX);
        assert_eq!(s.checks(), Check::ALL.to_vec());
        assert_eq!(s.last_action_step(), 3);
        assert_eq!(s.actions[1].action.name(), "halt");
    }

    #[test]
    fn serialization_round_trips() {
        let s = parse(&base()).unwrap();
        let again = Scenario::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = base();
        v["actions"][1]["when"] = json!(1);
        assert!(matches!(parse(&v), Err(ScenarioError::Parse(_))));
        let mut v = base();
        v["ledgers"][0]["colour"] = json!("red");
        assert!(matches!(parse(&v), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn amounts_must_be_decimal_strings() {
        let mut v = base();
        v["genesis"][0]["amount"] = json!("0x10");
        assert!(matches!(parse(&v), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn topology_errors_name_their_location() {
        let mut v = base();
        v["ledgers"][1]["id"] = json!("a");
        assert_eq!(invalid_at(&v), "ledgers[1]");

        let mut v = base();
        v["clients"][1]["counterparty"] = json!("b");
        assert_eq!(invalid_at(&v), "connections[0].b_client");

        let mut v = base();
        v["channels"][0]["b"] = json!("a");
        assert_eq!(invalid_at(&v), "channels[0].b");

        let mut v = base();
        v["relayers"][0]["poll_every"] = json!(0);
        assert_eq!(invalid_at(&v), "relayers[0].poll_every");
    }

    #[test]
    fn genesis_holds_base_denoms_only() {
        let mut v = base();
        v["genesis"][0]["denom"] = json!("transfer/ch-0/atom");
        assert_eq!(invalid_at(&v), "genesis[0].denom");
    }

    #[test]
    fn actions_are_checked() {
        let mut v = base();
        v["actions"][0]["step"] = json!(4);
        assert_eq!(invalid_at(&v), "actions[1]");

        let mut v = base();
        v["actions"][0]["step"] = json!(0);
        assert_eq!(invalid_at(&v), "actions[0]");

        let mut v = base();
        v["max_steps"] = json!(2);
        assert_eq!(invalid_at(&v), "actions[1]");

        let mut v = base();
        v["actions"][0]["channel"] = json!("ch-9");
        assert_eq!(invalid_at(&v), "actions[0].channel");

        let mut v = base();
        v["actions"][1] = json!({"step": 3, "action": "byzantine_mint", "ledger": "b", "channel": "ch-0",
                                 "account": "m", "denom": "atom", "amount": "1"});
        assert_eq!(invalid_at(&v), "actions[1].denom");
    }
}
