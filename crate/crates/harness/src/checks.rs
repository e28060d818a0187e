//! Safety and liveness checks over a recorded trace. Each check reads only
//! the trace, never the ledgers that produced it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ibcsim_core::channel::Order;
use ibcsim_core::ident::{ChannelId, ClientId, LedgerId, PortId};
use primitive_types::U256;
use serde::{Deserialize, Serialize};

use crate::trace::{Entry, TraceError, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// No packet is sent, received, acknowledged or timed out twice.
    ExactlyOnce,
    /// No packet is both received and timed out.
    DeliverXorTimeout,
    /// Ordered channels receive and acknowledge in sequence order.
    Ordering,
    /// Every sent packet is received or timed out by the end of the trace.
    Liveness,
    /// Unlocked plus escrowed amount of each base denom never changes.
    Conservation,
    /// Live commitments equal sends minus completed packets.
    Commitments,
    /// At rest, escrow on one end equals vouchers outstanding on the other.
    Backing,
    /// Equivocation freezes the counterparty clients within one relay
    /// interval and nothing sent from then on is received through them.
    Misbehaviour,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::ExactlyOnce,
        Check::DeliverXorTimeout,
        Check::Ordering,
        Check::Liveness,
        Check::Conservation,
        Check::Commitments,
        Check::Backing,
        Check::Misbehaviour,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::ExactlyOnce => "exactly_once",
            Check::DeliverXorTimeout => "deliver_xor_timeout",
            Check::Ordering => "ordering",
            Check::Liveness => "liveness",
            Check::Conservation => "conservation",
            Check::Commitments => "commitments",
            Check::Backing => "backing",
            Check::Misbehaviour => "misbehaviour",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown check {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: Check,
    pub pass: bool,
    /// First violation found, with the index of the offending record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<String>,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.violation {
            None => write!(f, "{}: pass", self.check),
            Some(v) => write!(f, "{}: FAIL ({v})", self.check),
        }
    }
}

type End = (LedgerId, PortId, ChannelId);
/// Source channel end and sequence.
type PacketId = (End, u64);

struct ChannelInfo {
    client: ClientId,
    ordering: Order,
    counterparty: End,
}

#[derive(Default)]
struct PacketLog {
    sends: Vec<usize>,
    recvs: Vec<usize>,
    acks: Vec<usize>,
    timeouts: Vec<usize>,
    cleanups: Vec<usize>,
}

impl PacketLog {
    fn completed_on_source(&self) -> bool {
        !(self.acks.is_empty() && self.timeouts.is_empty() && self.cleanups.is_empty())
    }
}

struct RelayerInfo {
    ends: [(LedgerId, ClientId); 2],
    poll_every: u64,
}

/// Indexed view of a structurally valid trace.
struct Model<'a> {
    records: &'a [TraceRecord],
    channels: BTreeMap<End, ChannelInfo>,
    relayers: Vec<RelayerInfo>,
    packets: BTreeMap<PacketId, PacketLog>,
    quiescent: bool,
}

fn malformed(index: usize, message: impl Into<String>) -> TraceError {
    TraceError::Malformed { line: index + 1, message: message.into() }
}

impl<'a> Model<'a> {
    fn build(records: &'a [TraceRecord]) -> Result<Self, TraceError> {
        match records.first() {
            Some(TraceRecord { entry: Entry::Header { .. }, .. }) => {}
            Some(_) => return Err(malformed(0, "trace must start with a header")),
            None => return Err(malformed(0, "empty trace")),
        }
        let last = records.len() - 1;
        let quiescent = match &records[last].entry {
            Entry::End { quiescent, .. } => *quiescent,
            _ => return Err(malformed(last, "trace is truncated: no end record")),
        };
        let mut model =
            Model { records, channels: BTreeMap::new(), relayers: Vec::new(), packets: BTreeMap::new(), quiescent };
        let mut prev_step = 0;
        for (i, r) in records.iter().enumerate() {
            if r.step < prev_step {
                return Err(malformed(i, format!("step goes back from {prev_step} to {}", r.step)));
            }
            prev_step = r.step;
            match &r.entry {
                Entry::Header { .. } if i != 0 => return Err(malformed(i, "second header")),
                Entry::End { .. } if i != last => return Err(malformed(i, "records after the end")),
                Entry::Channel { ledger, port, channel, client, ordering, counterparty_ledger, counterparty_port, counterparty_channel } => {
                    let key = (ledger.clone(), port.clone(), channel.clone());
                    let info = ChannelInfo {
                        client: client.clone(),
                        ordering: *ordering,
                        counterparty: (counterparty_ledger.clone(), counterparty_port.clone(), counterparty_channel.clone()),
                    };
                    if model.channels.insert(key, info).is_some() {
                        return Err(malformed(i, format!("channel {port}/{channel} on {ledger} declared twice")));
                    }
                }
                Entry::Relayer { a, a_client, b, b_client, poll_every, .. } => model.relayers.push(RelayerInfo {
                    ends: [(a.clone(), a_client.clone()), (b.clone(), b_client.clone())],
                    poll_every: *poll_every,
                }),
                Entry::Send { ledger, port, channel, sequence }
                | Entry::Ack { ledger, port, channel, sequence }
                | Entry::Timeout { ledger, port, channel, sequence, .. }
                | Entry::Cleanup { ledger, port, channel, sequence } => {
                    let end = (ledger.clone(), port.clone(), channel.clone());
                    if !model.paired(&end) {
                        return Err(malformed(i, format!("packet on undeclared channel {port}/{channel} on {ledger}")));
                    }
                    let log = model.packets.entry((end, *sequence)).or_default();
                    match &r.entry {
                        Entry::Send { .. } => log.sends.push(i),
                        Entry::Ack { .. } => log.acks.push(i),
                        Entry::Timeout { .. } => log.timeouts.push(i),
                        _ => log.cleanups.push(i),
                    }
                }
                Entry::Recv { ledger, port, channel, sequence } => {
                    let end = (ledger.clone(), port.clone(), channel.clone());
                    if !model.paired(&end) {
                        return Err(malformed(i, format!("receipt on undeclared channel {port}/{channel} on {ledger}")));
                    }
                    let src = model.channels[&end].counterparty.clone();
                    model.packets.entry((src, *sequence)).or_default().recvs.push(i);
                }
                _ => {}
            }
        }
        Ok(model)
    }

    /// The end and its counterparty are both declared.
    fn paired(&self, end: &End) -> bool {
        self.channels.get(end).is_some_and(|info| self.channels.contains_key(&info.counterparty))
    }

    fn check(&self, check: Check) -> Result<(), String> {
        match check {
            Check::ExactlyOnce => self.exactly_once(),
            Check::DeliverXorTimeout => self.deliver_xor_timeout(),
            Check::Ordering => self.ordering(),
            Check::Liveness => self.liveness(),
            Check::Conservation => self.conservation(),
            Check::Commitments => self.commitments(),
            Check::Backing => self.backing(),
            Check::Misbehaviour => self.misbehaviour(),
        }
    }

    fn exactly_once(&self) -> Result<(), String> {
        for (((l, p, c), seq), log) in &self.packets {
            let id = format!("{l}:{p}/{c}#{seq}");
            for (what, idx) in
                [("sent", &log.sends), ("received", &log.recvs), ("acknowledged", &log.acks), ("timed out", &log.timeouts)]
            {
                if idx.len() > 1 {
                    return Err(format!("record {}: {id} {what} a second time", idx[1]));
                }
            }
            let sent = log.sends.first().copied();
            for &i in log.recvs.iter().chain(&log.acks).chain(&log.timeouts) {
                if sent.is_none_or(|s| s > i) {
                    return Err(format!("record {i}: {id} completed before it was sent"));
                }
            }
            if let (Some(&a), r) = (log.acks.first(), log.recvs.first()) {
                if r.is_none_or(|&r| r > a) {
                    return Err(format!("record {a}: {id} acknowledged before it was received"));
                }
            }
        }
        Ok(())
    }

    fn deliver_xor_timeout(&self) -> Result<(), String> {
        for (((l, p, c), seq), log) in &self.packets {
            if let (Some(r), Some(t)) = (log.recvs.first(), log.timeouts.first()) {
                return Err(format!("records {r} and {t}: {l}:{p}/{c}#{seq} both received and timed out"));
            }
        }
        Ok(())
    }

    fn ordering(&self) -> Result<(), String> {
        // Per ordered source end: next expected receive and ack sequence.
        let mut next: BTreeMap<&End, (u64, u64)> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            let (src, seq, is_recv) = match &r.entry {
                Entry::Recv { ledger, port, channel, sequence } => {
                    let info = &self.channels[&(ledger.clone(), port.clone(), channel.clone())];
                    if info.ordering != Order::Ordered {
                        continue;
                    }
                    (info.counterparty.clone(), *sequence, true)
                }
                Entry::Ack { ledger, port, channel, sequence } => {
                    let key = (ledger.clone(), port.clone(), channel.clone());
                    if self.channels[&key].ordering != Order::Ordered {
                        continue;
                    }
                    (key, *sequence, false)
                }
                _ => continue,
            };
            let src = self.channels.get_key_value(&src).map(|(k, _)| k).expect("declared");
            let (want_recv, want_ack) = next.entry(src).or_insert((1, 1));
            let want = if is_recv { want_recv } else { want_ack };
            if seq != *want {
                let what = if is_recv { "received" } else { "acknowledged" };
                return Err(format!(
                    "record {i}: ordered channel {}:{}/{} {what} #{seq}, expected #{want}",
                    src.0, src.1, src.2
                ));
            }
            *want += 1;
        }
        Ok(())
    }

    fn liveness(&self) -> Result<(), String> {
        for (((l, p, c), seq), log) in &self.packets {
            if let Some(&s) = log.sends.first() {
                if log.recvs.is_empty() && log.timeouts.is_empty() {
                    return Err(format!("record {s}: {l}:{p}/{c}#{seq} neither received nor timed out"));
                }
            }
        }
        Ok(())
    }

    fn conservation(&self) -> Result<(), String> {
        let mut first: BTreeMap<(&LedgerId, &str), U256> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            if let Entry::Supply { ledger, denom, unlocked, escrowed } = &r.entry {
                let total = unlocked.checked_add(*escrowed).ok_or_else(|| format!("record {i}: supply overflows"))?;
                let initial = *first.entry((ledger, denom.as_str())).or_insert(total);
                if total != initial {
                    return Err(format!("record {i}: {denom} on {ledger} totals {total}, started at {initial}"));
                }
            }
        }
        Ok(())
    }

    fn commitments(&self) -> Result<(), String> {
        let mut live: BTreeMap<&LedgerId, i64> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            match &r.entry {
                Entry::Send { ledger, .. } => *live.entry(ledger).or_default() += 1,
                Entry::Ack { ledger, .. } | Entry::Timeout { ledger, .. } | Entry::Cleanup { ledger, .. } => {
                    *live.entry(ledger).or_default() -= 1
                }
                Entry::Commitments { ledger, live: reported } => {
                    let expected = live.get(ledger).copied().unwrap_or(0);
                    if expected != *reported as i64 {
                        return Err(format!(
                            "record {i}: {ledger} holds {reported} commitments, trace accounts for {expected}"
                        ));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn byzantine(&self) -> BTreeSet<&LedgerId> {
        self.records
            .iter()
            .filter_map(|r| match &r.entry {
                Entry::Action { ledger, action, ok: true, .. } if action == "byzantine_mint" => Some(ledger),
                _ => None,
            })
            .collect()
    }

    fn backing(&self) -> Result<(), String> {
        if !self.quiescent {
            return Ok(());
        }
        let byzantine = self.byzantine();
        let in_flight: BTreeSet<&End> = self
            .packets
            .iter()
            .filter(|(_, log)| !log.sends.is_empty() && !log.completed_on_source())
            .map(|((end, _), _)| end)
            .collect();
        let settled = |end: &End| {
            let cp = &self.channels[end].counterparty;
            !byzantine.contains(&end.0)
                && !byzantine.contains(&cp.0)
                && !in_flight.contains(end)
                && !in_flight.contains(cp)
        };
        // Final snapshot only: escrow on an end and the matching vouchers on
        // its counterparty.
        let mut escrow: BTreeMap<(End, String), (U256, usize)> = BTreeMap::new();
        let mut vouchers: BTreeMap<(End, String), (U256, usize)> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            match &r.entry {
                Entry::Escrow { ledger, port, channel, denom, amount } => {
                    escrow.insert(((ledger.clone(), port.clone(), channel.clone()), denom.clone()), (*amount, i));
                }
                Entry::Vouchers { ledger, port, channel, denom, amount } => {
                    vouchers.insert(((ledger.clone(), port.clone(), channel.clone()), denom.clone()), (*amount, i));
                }
                _ => {}
            }
        }
        for ((end, denom), (amount, i)) in &escrow {
            let Some(info) = self.channels.get(end) else {
                return Err(format!("record {i}: escrow on undeclared channel"));
            };
            if !settled(end) {
                continue;
            }
            let cp = &info.counterparty;
            let voucher = format!("{}/{}/{denom}", cp.1, cp.2);
            let minted = vouchers.get(&(cp.clone(), voucher.clone())).map_or(U256::zero(), |v| v.0);
            if minted != *amount {
                return Err(format!(
                    "record {i}: {} escrows {amount} {denom} on {}/{} but {} has {minted} {voucher} outstanding",
                    end.0, end.1, end.2, cp.0
                ));
            }
        }
        for ((end, denom), (amount, i)) in &vouchers {
            let Some(info) = self.channels.get(end) else {
                return Err(format!("record {i}: vouchers on undeclared channel"));
            };
            if !settled(end) {
                continue;
            }
            let cp = &info.counterparty;
            let prefix = format!("{}/{}/", end.1, end.2);
            let Some(base) = denom.strip_prefix(&prefix) else {
                return Err(format!("record {i}: voucher {denom} on {}/{} lacks the channel prefix", end.1, end.2));
            };
            let locked = escrow.get(&(cp.clone(), base.to_string())).map_or(U256::zero(), |v| v.0);
            if locked != *amount {
                return Err(format!(
                    "record {i}: {} has {amount} {denom} outstanding but {} escrows {locked} {base}",
                    end.0, cp.0
                ));
            }
        }
        Ok(())
    }

    fn misbehaviour(&self) -> Result<(), String> {
        for (i, r) in self.records.iter().enumerate() {
            let Entry::Action { ledger: faulty, action, ok: true, .. } = &r.entry else { continue };
            if action != "equivocate" {
                continue;
            }
            let s = r.step;
            for rel in &self.relayers {
                for (x, y) in [(0, 1), (1, 0)] {
                    let (host, client) = &rel.ends[y];
                    if &rel.ends[x].0 != faulty || host == faulty {
                        continue;
                    }
                    let deadline = s + rel.poll_every;
                    let frozen = self.records.iter().enumerate().skip(i).find(|(_, f)| {
                        matches!(&f.entry, Entry::ClientFrozen { ledger, client: c, .. } if ledger == host && c == client)
                    });
                    let Some((fi, f)) = frozen else {
                        return Err(format!("record {i}: {client} on {host} never froze after {faulty} equivocated"));
                    };
                    if f.step > deadline {
                        return Err(format!(
                            "record {fi}: {client} on {host} froze at step {}, deadline was {deadline}",
                            f.step
                        ));
                    }
                    self.nothing_received_since(faulty, host, client, s)?;
                }
            }
        }
        Ok(())
    }

    /// No packet sent by `faulty` at or after `step` is received on `host`
    /// through a channel verified by `client`.
    fn nothing_received_since(&self, faulty: &LedgerId, host: &LedgerId, client: &ClientId, step: u64) -> Result<(), String> {
        for ((src, seq), log) in &self.packets {
            if &src.0 != faulty {
                continue;
            }
            let Some(&s) = log.sends.first() else { continue };
            if self.records[s].step < step {
                continue;
            }
            let cp = &self.channels[src].counterparty;
            if &cp.0 != host || &self.channels[cp].client != client {
                continue;
            }
            if let Some(r) = log.recvs.first() {
                return Err(format!(
                    "record {r}: {host} received {}/{}#{seq} from {faulty} through frozen {client}",
                    src.1, src.2
                ));
            }
        }
        Ok(())
    }
}

/// Runs `checks` over `records`. A trace without a header and end record,
/// or with packet records for undeclared channels, is malformed.
pub fn verify_trace(records: &[TraceRecord], checks: &[Check]) -> Result<Vec<Verdict>, TraceError> {
    let model = Model::build(records)?;
    Ok(checks
        .iter()
        .map(|&check| {
            let violation = model.check(check).err();
            Verdict { check, pass: violation.is_none(), violation }
        })
        .collect())
}
