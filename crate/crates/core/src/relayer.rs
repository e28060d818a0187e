//! Off-ledger relay processes. A relayer watches a pair of ledgers, builds
//! the proof-carrying datagrams each side is owed and submits them, possibly
//! through a fault profile that drops, duplicates, corrupts and reorders.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelEnd, ChannelState, CleanupWitness, Order, Packet};
use crate::client::{ClientState, ClientType};
use crate::connection::{ConnectionEnd, ConnectionState};
use crate::events::EventKind;
use crate::ident::{ChannelId, ClientId, LedgerId, PortId};
use crate::ledger::{Ledger, PacketKey, TxError};
use crate::paths;
use crate::router::{Datagram, TxReceipt};
use crate::channel::ChannelOpen;

/// Client refreshes are forced after this many counterparty blocks so that
/// consensus-state proofs stay within the counterparty's block retention.
const REFRESH_BLOCKS: u64 = 128;

/// The set of simulated ledgers, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct Network {
    ledgers: BTreeMap<LedgerId, Ledger>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ledger: Ledger) {
        self.ledgers.insert(ledger.id().clone(), ledger);
    }

    pub fn get(&self, id: &LedgerId) -> Option<&Ledger> {
        self.ledgers.get(id)
    }

    pub fn get_mut(&mut self, id: &LedgerId) -> Option<&mut Ledger> {
        self.ledgers.get_mut(id)
    }

    /// Panics on an unknown id.
    pub fn ledger(&self, id: &LedgerId) -> &Ledger {
        self.ledgers.get(id).unwrap_or_else(|| panic!("unknown ledger {id}"))
    }

    /// Panics on an unknown id.
    pub fn ledger_mut(&mut self, id: &LedgerId) -> &mut Ledger {
        self.ledgers.get_mut(id).unwrap_or_else(|| panic!("unknown ledger {id}"))
    }

    pub fn ids(&self) -> impl Iterator<Item = &LedgerId> {
        self.ledgers.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Ledger> {
        self.ledgers.values()
    }

    /// One block on every ledger that is not halted.
    pub fn produce_blocks(&mut self) {
        for l in self.ledgers.values_mut() {
            if !l.is_halted() {
                l.produce_block().expect("not halted");
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelayMode {
    /// Discover packets from send and write-ack events.
    #[default]
    Event,
    /// Poll sequence counters and fetch the gap since the last relayed one.
    Query,
}

mod serde_ratio {
    use num_rational::Ratio;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(r)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<u64>, D::Error> {
        let s = String::deserialize(d)?;
        let r: Ratio<u64> = s.parse().map_err(serde::de::Error::custom)?;
        if r > Ratio::from_integer(1) {
            return Err(serde::de::Error::custom(format!("probability {s} exceeds 1")));
        }
        Ok(r)
    }
}

fn zero() -> Ratio<u64> {
    Ratio::from_integer(0)
}

/// Byzantine behaviour of a relayer. Probabilities are exact rationals
/// written as `"n/d"` or `"0"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultProfile {
    #[serde(with = "serde_ratio", default = "zero")]
    pub drop: Ratio<u64>,
    #[serde(with = "serde_ratio", default = "zero")]
    pub dup: Ratio<u64>,
    #[serde(with = "serde_ratio", default = "zero")]
    pub reorder: Ratio<u64>,
    #[serde(with = "serde_ratio", default = "zero")]
    pub corrupt: Ratio<u64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FaultProfile {
    fn default() -> Self {
        Self::honest()
    }
}

impl FaultProfile {
    pub fn honest() -> Self {
        FaultProfile { drop: zero(), dup: zero(), reorder: zero(), corrupt: zero(), seed: 0 }
    }

    pub fn is_honest(&self) -> bool {
        [self.drop, self.dup, self.reorder, self.corrupt].iter().all(|p| *p == zero())
    }
}

fn chance(rng: &mut ChaCha8Rng, p: Ratio<u64>) -> bool {
    if *p.numer() == 0 {
        return false;
    }
    rng.gen_range(0..*p.denom()) < *p.numer()
}

/// One side of a relayed path: a ledger and its client of the other side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEnd {
    pub ledger: LedgerId,
    pub client: ClientId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelayerConfigError {
    #[error("poll interval must be at least one block")]
    ZeroPollInterval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayerConfig {
    pub id: String,
    pub a: PathEnd,
    pub b: PathEnd,
    #[serde(default)]
    pub mode: RelayMode,
    #[serde(default = "one")]
    pub poll_every: u64,
    #[serde(default)]
    pub faults: FaultProfile,
    /// Submit each direction's datagrams as one transaction.
    #[serde(default)]
    pub bundle: bool,
}

fn one() -> u64 {
    1
}

impl RelayerConfig {
    pub fn new(id: impl Into<String>, a: PathEnd, b: PathEnd) -> Self {
        RelayerConfig {
            id: id.into(),
            a,
            b,
            mode: RelayMode::Event,
            poll_every: 1,
            faults: FaultProfile::honest(),
            bundle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", content = "reason", rename_all = "snake_case")]
pub enum Outcome {
    Applied,
    Aborted(String),
    /// Part of a bundle that another datagram aborted.
    RolledBack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub relayer: String,
    pub target: LedgerId,
    pub datagram: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequence: Option<u64>,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubmissionReport {
    pub records: Vec<SubmissionRecord>,
}

impl SubmissionReport {
    pub fn applied(&self) -> usize {
        self.records.iter().filter(|r| r.outcome == Outcome::Applied).count()
    }

    pub fn aborted(&self) -> usize {
        self.records.iter().filter(|r| matches!(r.outcome, Outcome::Aborted(_))).count()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// What a relayer remembers about one ledger of its pair.
#[derive(Debug, Clone, Default)]
struct Watch {
    cursor: usize,
    sends: BTreeMap<PacketKey, Packet>,
    acks: BTreeMap<PacketKey, Vec<u8>>,
    low_water: BTreeMap<(PortId, ChannelId), u64>,
}

#[derive(Debug, Clone)]
pub struct Relayer {
    config: RelayerConfig,
    rng: ChaCha8Rng,
    last_poll: Option<u64>,
    watch: [Watch; 2],
}

struct Side<'a> {
    ledger: &'a Ledger,
    /// This ledger's client of the other side.
    client: &'a ClientId,
}

impl Relayer {
    pub fn new(config: RelayerConfig) -> Result<Self, RelayerConfigError> {
        if config.poll_every == 0 {
            return Err(RelayerConfigError::ZeroPollInterval);
        }
        let rng = ChaCha8Rng::seed_from_u64(config.faults.seed);
        Ok(Relayer { config, rng, last_poll: None, watch: Default::default() })
    }

    pub fn config(&self) -> &RelayerConfig {
        &self.config
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    fn end(&self, i: usize) -> &PathEnd {
        if i == 0 {
            &self.config.a
        } else {
            &self.config.b
        }
    }

    /// Scans both ledgers, then relays a→b and b→a. Does nothing until
    /// `poll_every` blocks have passed on side a since the previous poll.
    pub fn relay_once(&mut self, net: &mut Network) -> SubmissionReport {
        let mut report = SubmissionReport::default();
        let now = net.ledger(&self.config.a.ledger).height();
        if let Some(last) = self.last_poll {
            if now < last + self.config.poll_every {
                return report;
            }
        }
        self.last_poll = Some(now);
        for (from, to) in [(0, 1), (1, 0)] {
            self.scan(net, from);
            self.scan(net, to);
            let datagrams = self.pending(net, from, to);
            let target = self.end(to).ledger.clone();
            if net.ledger(&target).is_halted() || datagrams.is_empty() {
                continue;
            }
            let datagrams = self.inject_faults(datagrams);
            self.submit(net, &target, datagrams, &mut report);
        }
        report
    }

    /// Datagrams owed to side `to`, built from side `from`, in dependency order.
    pub fn pending_datagrams(&mut self, net: &Network, from_a: bool) -> Vec<Datagram> {
        let (from, to) = if from_a { (0, 1) } else { (1, 0) };
        self.scan(net, from);
        self.scan(net, to);
        self.pending(net, from, to)
    }

    fn scan(&mut self, net: &Network, i: usize) {
        let ledger = net.ledger(&self.end(i).ledger);
        let w = &mut self.watch[i];
        if self.config.mode == RelayMode::Event {
            for ev in &ledger.events()[w.cursor..] {
                match &ev.kind {
                    EventKind::SendPacket { packet } => {
                        w.sends.insert(packet.source_key(), packet.clone());
                    }
                    EventKind::WriteAck { packet, ack } => {
                        w.acks.insert(packet.dest_key(), ack.clone());
                    }
                    _ => {}
                }
            }
            w.cursor = ledger.events().len();
            w.sends.retain(|(port, chan, seq), _| ledger.packet_commitment(port, chan, *seq).is_some());
        }
    }

    /// Packets sent on side `i` over this path that still have a commitment.
    fn in_flight(&mut self, net: &Network, i: usize) -> Vec<Packet> {
        let end = self.end(i).clone();
        let ledger = net.ledger(&end.ledger);
        let on_path = |port: &PortId, chan: &ChannelId| channel_client(ledger, port, chan).as_ref() == Some(&end.client);
        match self.config.mode {
            RelayMode::Event => self.watch[i]
                .sends
                .values()
                .filter(|p| on_path(&p.source_port, &p.source_channel))
                .cloned()
                .collect(),
            RelayMode::Query => {
                let mut out = Vec::new();
                for (port, chan) in ledger.channel_ids() {
                    if !on_path(&port, &chan) {
                        continue;
                    }
                    let next = ledger.next_sequence_send(&port, &chan).unwrap_or(1);
                    let lw = self.watch[i].low_water.entry((port.clone(), chan.clone())).or_insert(1);
                    while *lw < next && ledger.packet_commitment(&port, &chan, *lw).is_none() {
                        *lw += 1;
                    }
                    for seq in *lw..next {
                        if ledger.packet_commitment(&port, &chan, seq).is_some() {
                            if let Some(p) = ledger.sent_packet(&port, &chan, seq) {
                                out.push(p.clone());
                            }
                        }
                    }
                }
                out
            }
        }
    }

    fn ack_bytes(&self, x_idx: usize, x: &Ledger, p: &Packet) -> Option<Vec<u8>> {
        match self.config.mode {
            RelayMode::Event => self.watch[x_idx].acks.get(&p.dest_key()).cloned(),
            RelayMode::Query => x.written_ack(&p.dest_port, &p.dest_channel, p.sequence).map(<[u8]>::to_vec),
        }
    }

    fn pending(&mut self, net: &Network, xi: usize, yi: usize) -> Vec<Datagram> {
        let x_sent = self.in_flight(net, xi);
        let y_sent = self.in_flight(net, yi);
        let (xe, ye) = (self.end(xi).clone(), self.end(yi).clone());
        let x = Side { ledger: net.ledger(&xe.ledger), client: &xe.client };
        let y = Side { ledger: net.ledger(&ye.ledger), client: &ye.client };
        let Ok(y_client) = y.ledger.client_state(y.client) else { return Vec::new() };

        let mut out = Vec::new();
        if !y_client.is_frozen() && y_client.client_type != ClientType::Loopback {
            for evidence in x.ledger.equivocations() {
                out.push(Datagram::ClientMisbehaviour { client: y.client.clone(), evidence: evidence.clone() });
            }
            if !out.is_empty() {
                return out;
            }
        }

        let Some(h) = proof_height(&x, &y, &y_client) else { return out };
        let mut work = Vec::new();
        handshake_datagrams(&x, &y, h, &mut work);
        let mut recvs = Vec::new();
        for p in x_sent {
            if let Some(d) = recv_datagram(&x, &y, h, p) {
                recvs.push(d);
            }
        }
        let (mut acks, mut cleanups, mut timeouts) = (Vec::new(), Vec::new(), Vec::new());
        for p in y_sent {
            let ack = self.ack_bytes(xi, x.ledger, &p);
            source_datagram(&x, &y, h, p, ack, &mut acks, &mut cleanups, &mut timeouts);
        }
        // A handshake step can close a channel that packet datagrams built
        // from the same snapshot expect open; packets wait for the next poll
        // so a bundle never carries a datagram doomed by an earlier one.
        if work.is_empty() {
            // An ordered timeout closes its channel, so one per channel.
            let mut closing = BTreeSet::new();
            timeouts.retain(|d| match d {
                Datagram::PacketTimeout { packet, next_sequence_recv: Some(_), .. } => {
                    closing.insert((packet.source_port.clone(), packet.source_channel.clone()))
                }
                _ => true,
            });
            work.extend(recvs);
            work.extend(acks);
            work.extend(cleanups);
            work.extend(timeouts);
        }

        if y_client.client_type != ClientType::Loopback && !y_client.is_frozen() && h > y_client.latest_height {
            let stale = match y.ledger.client_consensus_state(y.client, y_client.latest_height) {
                Ok(Some(cs)) => {
                    x.ledger.timestamp().saturating_sub(cs.timestamp) * 2 > y_client.trusting_period
                        || h - y_client.latest_height >= REFRESH_BLOCKS
                }
                _ => false,
            };
            if !work.is_empty() || stale {
                let header = x.ledger.header_at(h).expect("tip header retained");
                out.push(Datagram::ClientUpdate { client: y.client.clone(), header });
            }
        }
        out.extend(work);
        out
    }

    fn inject_faults(&mut self, datagrams: Vec<Datagram>) -> Vec<Datagram> {
        let f = self.config.faults.clone();
        if f.is_honest() {
            return datagrams;
        }
        let mut out = Vec::with_capacity(datagrams.len());
        for d in datagrams {
            if chance(&mut self.rng, f.drop) {
                continue;
            }
            if chance(&mut self.rng, f.dup) {
                out.push(d.clone());
            }
            out.push(d);
        }
        for d in &mut out {
            if chance(&mut self.rng, f.corrupt) {
                if let Some(p) = d.packet_mut() {
                    if !p.data.is_empty() {
                        let i = self.rng.gen_range(0..p.data.len());
                        p.data[i] ^= self.rng.gen_range(1..=255u8);
                    }
                }
            }
        }
        if chance(&mut self.rng, f.reorder) {
            out.shuffle(&mut self.rng);
        }
        out
    }

    fn submit(&self, net: &mut Network, target: &LedgerId, datagrams: Vec<Datagram>, report: &mut SubmissionReport) {
        let ledger = net.ledger_mut(target);
        let record = |d: &Datagram, outcome: Outcome| SubmissionRecord {
            relayer: self.config.id.clone(),
            target: target.clone(),
            datagram: d.kind().to_string(),
            sequence: d.packet().map(|p| p.sequence),
            outcome,
        };
        if self.config.bundle {
            let result = ledger.execute_transaction(&datagrams);
            for (i, d) in datagrams.iter().enumerate() {
                let outcome = match &result {
                    Ok(_) => Outcome::Applied,
                    Err(TxError::Aborted { index, reason }) if *index == i => Outcome::Aborted(reason.to_string()),
                    Err(_) => Outcome::RolledBack,
                };
                report.records.push(record(d, outcome));
            }
        } else {
            for d in &datagrams {
                let outcome = match ledger.execute_transaction(std::slice::from_ref(d)) {
                    Ok(TxReceipt { .. }) => Outcome::Applied,
                    Err(e) => Outcome::Aborted(e.reason().map_or_else(|| e.to_string(), ToString::to_string)),
                };
                report.records.push(record(d, outcome));
            }
        }
    }
}

/// Client used by the connection of a channel in the working state.
fn channel_client(l: &Ledger, port: &PortId, chan: &ChannelId) -> Option<ClientId> {
    let end = l.channel_end(port, chan).ok()?;
    Some(l.connection_end(end.connection()).ok()?.client)
}

/// Height of `x` at which proofs are taken: the tip, or for a frozen client
/// the highest height it still trusts.
fn proof_height(x: &Side<'_>, y: &Side<'_>, y_client: &ClientState) -> Option<u64> {
    let oldest = x.ledger.height().saturating_sub(crate::ledger::BLOCK_RETENTION as u64 - 1);
    if y_client.is_frozen() {
        y.ledger
            .client_consensus_heights(y.client)
            .into_iter()
            .filter(|h| *h < y_client.frozen_height && *h >= oldest && *h <= x.ledger.height())
            .max()
    } else {
        Some(x.ledger.height())
    }
}

fn handshake_datagrams(x: &Side<'_>, y: &Side<'_>, h: u64, out: &mut Vec<Datagram>) {
    let xl = x.ledger;
    let consensus_height = || -> Option<u64> {
        Some(xl.query::<ClientState>(h, &paths::client_state(x.client)).ok()??.latest_height)
    };
    for conn_id in xl.connection_ids() {
        let Ok(Some(xc)) = xl.query::<ConnectionEnd>(h, &paths::connection(&conn_id)) else { continue };
        if xc.client != *x.client || xc.counterparty_client != *y.client {
            continue;
        }
        let yc = y.ledger.connection_end(&xc.counterparty_connection).ok();
        let points_back = |c: &ConnectionEnd| c.counterparty_connection == conn_id;
        let Ok(proof_conn) = xl.prove(h, &paths::connection(&conn_id)) else { continue };
        match xc.state {
            ConnectionState::Init if yc.as_ref().is_none_or(|c| c.state == ConnectionState::Init && points_back(c)) => {
                let Some(ch) = consensus_height() else { continue };
                let Ok(proof_consensus) = xl.prove(h, &paths::consensus_state(x.client, ch)) else { continue };
                out.push(Datagram::ConnOpenTry {
                    connection: xc.counterparty_connection.clone(),
                    counterparty_connection: conn_id.clone(),
                    counterparty_prefix: xl.prefix().clone(),
                    counterparty_client: x.client.clone(),
                    client: y.client.clone(),
                    counterparty_versions: xc.versions.clone(),
                    proof_init: proof_conn,
                    proof_consensus,
                    proof_height: h,
                    consensus_height: ch,
                });
            }
            ConnectionState::TryOpen
                if yc.as_ref().is_some_and(|c| {
                    matches!(c.state, ConnectionState::Init | ConnectionState::TryOpen) && points_back(c)
                }) =>
            {
                let Some(ch) = consensus_height() else { continue };
                let Ok(proof_consensus) = xl.prove(h, &paths::consensus_state(x.client, ch)) else { continue };
                out.push(Datagram::ConnOpenAck {
                    connection: xc.counterparty_connection.clone(),
                    version: xc.versions[0].clone(),
                    proof_try: proof_conn,
                    proof_consensus,
                    proof_height: h,
                    consensus_height: ch,
                });
            }
            ConnectionState::Open if yc.as_ref().is_some_and(|c| c.state == ConnectionState::TryOpen && points_back(c)) => {
                out.push(Datagram::ConnOpenConfirm {
                    connection: xc.counterparty_connection.clone(),
                    proof_ack: proof_conn,
                    proof_height: h,
                });
            }
            _ => {}
        }
    }

    for (port, chan) in xl.channel_ids() {
        let Ok(Some(xe)) = xl.query::<ChannelEnd>(h, &paths::channel(&port, &chan)) else { continue };
        let Ok(Some(xconn)) = xl.query::<ConnectionEnd>(h, &paths::connection(xe.connection())) else { continue };
        if xconn.client != *x.client {
            continue;
        }
        let (cp_port, cp_chan) = (&xe.counterparty_port, &xe.counterparty_channel);
        let ye = y.ledger.channel_end(cp_port, cp_chan).ok();
        let points_back = |e: &ChannelEnd| e.counterparty_port == port && e.counterparty_channel == chan;
        let Ok(proof) = xl.prove(h, &paths::channel(&port, &chan)) else { continue };
        match xe.state {
            ChannelState::Init
                if y.ledger.module_for(cp_port).is_some()
                    && ye.as_ref().is_none_or(|e| e.state == ChannelState::Init && points_back(e)) =>
            {
                out.push(Datagram::ChanOpenTry {
                    open: ChannelOpen {
                        ordering: xe.ordering,
                        connection_hops: vec![xconn.counterparty_connection.clone()],
                        port: cp_port.clone(),
                        channel: cp_chan.clone(),
                        counterparty_port: port.clone(),
                        counterparty_channel: chan.clone(),
                        version: xe.version.clone(),
                    },
                    counterparty_version: xe.version.clone(),
                    proof_init: proof,
                    proof_height: h,
                });
            }
            ChannelState::TryOpen
                if ye.as_ref().is_some_and(|e| {
                    matches!(e.state, ChannelState::Init | ChannelState::TryOpen) && points_back(e)
                }) =>
            {
                out.push(Datagram::ChanOpenAck {
                    port: cp_port.clone(),
                    channel: cp_chan.clone(),
                    counterparty_version: xe.version.clone(),
                    proof_try: proof,
                    proof_height: h,
                });
            }
            ChannelState::Open if ye.as_ref().is_some_and(|e| e.state == ChannelState::TryOpen && points_back(e)) => {
                out.push(Datagram::ChanOpenConfirm {
                    port: cp_port.clone(),
                    channel: cp_chan.clone(),
                    proof_ack: proof,
                    proof_height: h,
                });
            }
            ChannelState::Closed
                if ye.as_ref().is_some_and(|e| e.state != ChannelState::Closed && points_back(e)) =>
            {
                out.push(Datagram::ChanCloseConfirm {
                    port: cp_port.clone(),
                    channel: cp_chan.clone(),
                    proof_init: proof,
                    proof_height: h,
                });
            }
            _ => {}
        }
    }
}

/// Receive on `y` of a packet sent on `x`, if `y` can still take it.
fn recv_datagram(x: &Side<'_>, y: &Side<'_>, h: u64, p: Packet) -> Option<Datagram> {
    let commitment_path = paths::packet_commitment(&p.source_port, &p.source_channel, p.sequence);
    if x.ledger.query_raw(h, &commitment_path).ok()?? != p.commitment().0 {
        return None;
    }
    let yl = y.ledger;
    let ye = yl.channel_end(&p.dest_port, &p.dest_channel).ok()?;
    if ye.state != ChannelState::Open {
        return None;
    }
    if yl.get_working(&paths::packet_ack(&p.dest_port, &p.dest_channel, p.sequence)).is_some() {
        return None;
    }
    if ye.ordering == Order::Ordered && yl.next_sequence_recv(&p.dest_port, &p.dest_channel).ok()? > p.sequence {
        return None;
    }
    if (p.timeout_height != 0 && yl.height() >= p.timeout_height)
        || (p.timeout_timestamp != 0 && yl.timestamp() >= p.timeout_timestamp)
    {
        return None;
    }
    let proof = x.ledger.prove(h, &commitment_path).ok()?;
    Some(Datagram::PacketRecv { packet: p, proof, proof_height: h })
}

/// Completion on `y` of a packet `y` sent to `x`: ack, cleanup, timeout or
/// timeout-on-close, whichever `x`'s state at `h` supports.
#[allow(clippy::too_many_arguments)]
fn source_datagram(
    x: &Side<'_>,
    y: &Side<'_>,
    h: u64,
    p: Packet,
    ack: Option<Vec<u8>>,
    acks: &mut Vec<Datagram>,
    cleanups: &mut Vec<Datagram>,
    timeouts: &mut Vec<Datagram>,
) {
    let (xl, yl) = (x.ledger, y.ledger);
    if yl.packet_commitment(&p.source_port, &p.source_channel, p.sequence).as_deref() != Some(&p.commitment().0[..]) {
        return;
    }
    let Ok(y_end) = yl.channel_end(&p.source_port, &p.source_channel) else { return };
    if channel_client(yl, &p.source_port, &p.source_channel).as_ref() != Some(y.client) {
        return;
    }
    let y_open = y_end.state == ChannelState::Open;
    let ack_path = paths::packet_ack(&p.dest_port, &p.dest_channel, p.sequence);
    let Ok(ack_record) = xl.query_raw(h, &ack_path) else { return };
    if ack_record.is_some() {
        if let (true, Some(ack)) = (y_open, ack) {
            if let Ok(proof) = xl.prove(h, &ack_path) {
                acks.push(Datagram::PacketAck { packet: p, ack, proof, proof_height: h });
            }
        }
        return;
    }
    let ordered = y_end.ordering == Order::Ordered;
    let nsr_path = paths::next_sequence_recv(&p.dest_port, &p.dest_channel);
    let next_recv = if ordered {
        match xl.query::<u64>(h, &nsr_path) {
            Ok(Some(n)) => Some(n),
            _ => return,
        }
    } else {
        None
    };
    if let Some(n) = next_recv {
        if n > p.sequence {
            if y_open {
                if let Ok(proof) = xl.prove(h, &nsr_path) {
                    cleanups.push(Datagram::PacketCleanup {
                        packet: p,
                        proof,
                        proof_height: h,
                        witness: CleanupWitness::NextSequenceRecv(n),
                    });
                }
            }
            return;
        }
    }
    let unreceived_path = if ordered { &nsr_path } else { &ack_path };
    let Ok(proof_unreceived) = xl.prove(h, unreceived_path) else { return };
    let ts = xl.block_at(h).map(|b| b.header.timestamp).unwrap_or(0);
    let timed_out =
        (p.timeout_height > 0 && h >= p.timeout_height) || (p.timeout_timestamp > 0 && ts > p.timeout_timestamp);
    if timed_out && y_open {
        timeouts.push(Datagram::PacketTimeout {
            packet: p,
            proof: proof_unreceived,
            proof_height: h,
            next_sequence_recv: next_recv,
        });
        return;
    }
    let dest_path = paths::channel(&p.dest_port, &p.dest_channel);
    let dest_closed = matches!(xl.query::<ChannelEnd>(h, &dest_path), Ok(Some(e)) if e.state == ChannelState::Closed);
    if dest_closed {
        if let Ok(proof_closed) = xl.prove(h, &dest_path) {
            timeouts.push(Datagram::PacketTimeoutOnClose {
                packet: p,
                proof_closed,
                proof_unreceived,
                proof_height: h,
                next_sequence_recv: next_recv,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_profile_parses_rationals() {
        let f: FaultProfile = serde_json::from_str(r#"{"drop":"1/2","corrupt":"1/5","seed":3}"#).unwrap();
        assert_eq!(f.drop, Ratio::new(1, 2));
        assert_eq!(f.dup, zero());
        assert!(!f.is_honest());
        assert!(serde_json::from_str::<FaultProfile>(r#"{"drop":"3/2"}"#).is_err());
    }

    #[test]
    fn chance_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| !chance(&mut rng, zero())));
        assert!((0..100).all(|_| chance(&mut rng, Ratio::from_integer(1))));
    }

    #[test]
    fn zero_poll_interval_rejected() {
        let end = |l: &str| PathEnd { ledger: LedgerId::new(l).unwrap(), client: ClientId::new("c").unwrap() };
        let mut cfg = RelayerConfig::new("r", end("a"), end("b"));
        cfg.poll_every = 0;
        assert_eq!(Relayer::new(cfg).unwrap_err(), RelayerConfigError::ZeroPollInterval);
    }
}
