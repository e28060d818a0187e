//! Deterministic scenario execution. One step fires the step's actions,
//! produces a block on every running ledger, then runs each relayer once.

use std::collections::{BTreeMap, BTreeSet};

use ibcsim_core::ident::{ChannelId, ClientId, LedgerId, PortId};
use ibcsim_core::ledger::{Ledger, LedgerConfig, TxError};
use ibcsim_core::events::EventKind;
use ibcsim_core::relayer::{Network, Outcome, PathEnd, Relayer, RelayerConfig};
use ibcsim_core::setup::{self, SetupError};
use ibcsim_core::transfer::{self, TransferError, TransferRequest};
use thiserror::Error;

use crate::checks::{verify_trace, Verdict};
use crate::scenario::{Action, Scenario};
use crate::trace::{Entry, TraceRecord};

/// Steps a handshake may take during setup before the run gives up.
const SETUP_STEPS: usize = 40;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("setup failed: {0}")]
    Setup(#[from] SetupError),
    #[error("setup transaction failed: {0}")]
    Tx(#[from] TxError),
    #[error("genesis allocation failed: {0}")]
    Genesis(#[from] TransferError),
    #[error("port binding failed: {0}")]
    Port(#[from] ibcsim_core::ledger::PortError),
    #[error("relayer config rejected: {0}")]
    Relayer(#[from] ibcsim_core::relayer::RelayerConfigError),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub verdicts: Vec<Verdict>,
    pub steps: u64,
    pub quiescent: bool,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

#[derive(Debug, Clone)]
struct ChannelEnds {
    counterparty_ledger: LedgerId,
}

/// A scenario's network and relayers, mid-run.
pub struct Simulation {
    scenario: Scenario,
    net: Network,
    relayers: Vec<Relayer>,
    channels: BTreeMap<(LedgerId, PortId, ChannelId), ChannelEnds>,
    /// Events already copied into the trace, per ledger.
    cursors: BTreeMap<LedgerId, usize>,
    supply: BTreeSet<(LedgerId, String)>,
    trace: Vec<TraceRecord>,
    step: u64,
}

/// Mixes the run seed into each relayer's fault seed so one run seed varies
/// every relayer.
fn relayer_seed(run_seed: u64, fault_seed: u64, index: usize) -> u64 {
    let mut z = run_seed ^ fault_seed.rotate_left(17) ^ (index as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    // splitmix64 finaliser
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Simulation {
    /// Builds the topology, opens every connection and channel with honest
    /// setup relayers, and applies genesis balances.
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self, RunError> {
        let mut net = Network::new();
        for spec in &scenario.ledgers {
            let config = LedgerConfig::new(spec.id.clone())
                .with_signers(spec.signers)
                .with_block_time(spec.block_time)
                .with_seed(seed);
            let mut ledger = Ledger::new(config);
            transfer::install(&mut ledger)?;
            net.insert(ledger);
        }
        net.produce_blocks();

        let mut trace = vec![TraceRecord { step: 0, entry: Entry::Header { scenario: scenario.name.clone(), seed } }];
        let mut tracks: BTreeMap<(LedgerId, ClientId), LedgerId> = BTreeMap::new();
        for c in &scenario.clients {
            setup::create_client(&mut net, &c.host, &c.counterparty, &c.id, c.trusting_period)?;
            tracks.insert((c.host.clone(), c.id.clone()), c.counterparty.clone());
            trace.push(TraceRecord {
                step: 0,
                entry: Entry::Client { ledger: c.host.clone(), client: c.id.clone(), tracks: c.counterparty.clone() },
            });
        }

        let mut conn_clients = BTreeMap::new();
        for (i, c) in scenario.connections.iter().enumerate() {
            let mut setup_relayer = vec![Relayer::new(RelayerConfig::new(
                format!("setup-{i}"),
                PathEnd { ledger: c.a.clone(), client: c.a_client.clone() },
                PathEnd { ledger: c.b.clone(), client: c.b_client.clone() },
            ))?];
            let spec = setup::ConnectionSpec {
                a: c.a.clone(),
                a_client: c.a_client.clone(),
                a_connection: c.a_connection.clone(),
                b: c.b.clone(),
                b_client: c.b_client.clone(),
                b_connection: c.b_connection.clone(),
            };
            setup::open_connection(&mut net, &mut setup_relayer, &spec, SETUP_STEPS)?;
            conn_clients.insert((c.a.clone(), c.a_connection.clone()), (c.a_client.clone(), i));
            conn_clients.insert((c.b.clone(), c.b_connection.clone()), (c.b_client.clone(), i));
        }

        let mut channels = BTreeMap::new();
        for ch in &scenario.channels {
            let (a_client, conn_index) = conn_clients[&(ch.a.clone(), ch.a_connection.clone())].clone();
            let conn = &scenario.connections[conn_index];
            let b_client = if conn.a == ch.a && conn.a_connection == ch.a_connection {
                conn.b_client.clone()
            } else {
                conn.a_client.clone()
            };
            let mut setup_relayer = vec![Relayer::new(RelayerConfig::new(
                "setup",
                PathEnd { ledger: ch.a.clone(), client: a_client.clone() },
                PathEnd { ledger: ch.b.clone(), client: b_client.clone() },
            ))?];
            let spec = setup::ChannelSpec {
                a: ch.a.clone(),
                a_port: ch.a_port.clone(),
                a_channel: ch.a_channel.clone(),
                a_connection: ch.a_connection.clone(),
                b: ch.b.clone(),
                b_port: ch.b_port.clone(),
                b_channel: ch.b_channel.clone(),
                ordering: ch.ordering,
                version: transfer::VERSION.to_string(),
            };
            setup::open_channel(&mut net, &mut setup_relayer, &spec, SETUP_STEPS)?;
            for (l, p, c, client, cl, cp, cc) in [
                (&ch.a, &ch.a_port, &ch.a_channel, &a_client, &ch.b, &ch.b_port, &ch.b_channel),
                (&ch.b, &ch.b_port, &ch.b_channel, &b_client, &ch.a, &ch.a_port, &ch.a_channel),
            ] {
                channels.insert((l.clone(), p.clone(), c.clone()), ChannelEnds { counterparty_ledger: cl.clone() });
                trace.push(TraceRecord {
                    step: 0,
                    entry: Entry::Channel {
                        ledger: l.clone(),
                        port: p.clone(),
                        channel: c.clone(),
                        client: client.clone(),
                        ordering: ch.ordering,
                        counterparty_ledger: cl.clone(),
                        counterparty_port: cp.clone(),
                        counterparty_channel: cc.clone(),
                    },
                });
            }
        }

        let mut relayers = Vec::new();
        for (i, config) in scenario.relayers.iter().enumerate() {
            let mut config = config.clone();
            config.faults.seed = relayer_seed(seed, config.faults.seed, i);
            trace.push(TraceRecord {
                step: 0,
                entry: Entry::Relayer {
                    id: config.id.clone(),
                    a: config.a.ledger.clone(),
                    a_client: config.a.client.clone(),
                    b: config.b.ledger.clone(),
                    b_client: config.b.client.clone(),
                    poll_every: config.poll_every,
                },
            });
            relayers.push(Relayer::new(config)?);
        }

        let mut supply = BTreeSet::new();
        for g in &scenario.genesis {
            transfer::mint(net.ledger_mut(&g.ledger), &g.account, &g.denom, g.amount)?;
            supply.insert((g.ledger.clone(), g.denom.clone()));
        }

        // Setup history is not part of the trace.
        let cursors = net.iter().map(|l| (l.id().clone(), l.events().len() + l.pending_events().len())).collect();
        let mut sim = Simulation {
            scenario: scenario.clone(),
            net,
            relayers,
            channels,
            cursors,
            supply,
            trace,
            step: 0,
        };
        sim.record_state();
        Ok(sim)
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    fn push(&mut self, entry: Entry) {
        self.trace.push(TraceRecord { step: self.step, entry });
    }

    /// Advances one step and reports how many non-update datagrams applied.
    pub fn step(&mut self) -> usize {
        self.step += 1;
        let actions: Vec<Action> =
            self.scenario.actions.iter().filter(|a| a.step == self.step).map(|a| a.action.clone()).collect();
        for action in &actions {
            self.apply(action);
        }
        for spec in &self.scenario.ledgers {
            let ledger = self.net.ledger_mut(&spec.id);
            if ledger.is_halted() {
                ledger.advance_clock(spec.block_time);
            } else {
                ledger.produce_block().expect("not halted");
            }
        }
        self.collect_events();
        let mut progress = 0;
        for i in 0..self.relayers.len() {
            let report = self.relayers[i].relay_once(&mut self.net);
            for rec in report.records {
                let applied = rec.outcome == Outcome::Applied;
                if applied && rec.datagram != "ClientUpdate" {
                    progress += 1;
                }
                let reason = match rec.outcome {
                    Outcome::Aborted(r) => Some(r),
                    Outcome::RolledBack => Some("rolled back".to_string()),
                    Outcome::Applied => None,
                };
                self.push(Entry::Submission {
                    relayer: rec.relayer,
                    target: rec.target,
                    datagram: rec.datagram,
                    sequence: rec.sequence,
                    applied,
                    reason,
                });
            }
            self.collect_events();
        }
        self.record_state();
        progress
    }

    fn apply(&mut self, action: &Action) {
        let result: Result<(), String> = match action {
            Action::Transfer { ledger, channel, port, denom, amount, sender, receiver, timeout_blocks, timeout_secs } => {
                let dest = &self.channels[&(ledger.clone(), port.clone(), channel.clone())].counterparty_ledger;
                let dest = self.net.ledger(dest);
                let req = TransferRequest {
                    port: port.clone(),
                    channel: channel.clone(),
                    denom: denom.clone(),
                    amount: *amount,
                    sender: sender.clone(),
                    receiver: receiver.clone(),
                    timeout_height: timeout_blocks.map_or(0, |n| dest.height() + n),
                    timeout_timestamp: timeout_secs.map_or(0, |s| dest.timestamp() + s),
                };
                transfer::send_transfer(self.net.ledger_mut(ledger), &req).map(|_| ()).map_err(|e| e.to_string())
            }
            Action::Halt { ledger } => {
                self.net.ledger_mut(ledger).halt();
                Ok(())
            }
            Action::Resume { ledger } => {
                self.net.ledger_mut(ledger).resume();
                Ok(())
            }
            Action::CloseChannel { ledger, channel, port } => self
                .net
                .ledger_mut(ledger)
                .module_call(port, |ctx| ctx.close_channel(channel))
                .map_err(|e| e.to_string()),
            Action::ByzantineMint { ledger, channel, port, account, denom, amount } => {
                transfer::byzantine_mint(self.net.ledger_mut(ledger), port, channel, account, denom, *amount)
                    .map_err(|e| e.to_string())
            }
            Action::Equivocate { ledger } => {
                self.net.ledger_mut(ledger).schedule_equivocation();
                Ok(())
            }
        };
        self.push(Entry::Action {
            ledger: action.ledger().clone(),
            action: action.name().to_string(),
            ok: result.is_ok(),
            detail: result.err(),
        });
        self.collect_events();
    }

    /// Copies committed and pending events not yet traced. Pending events
    /// belong to applied transactions, only their block is still to come.
    fn collect_events(&mut self) {
        let mut entries = Vec::new();
        for ledger in self.net.iter() {
            let cursor = self.cursors.get_mut(ledger.id()).expect("known ledger");
            let all = ledger.events().iter().chain(ledger.pending_events());
            for ev in all.skip(*cursor) {
                *cursor += 1;
                let l = ledger.id().clone();
                let entry = match &ev.kind {
                    EventKind::SendPacket { packet } => Entry::Send {
                        ledger: l,
                        port: packet.source_port.clone(),
                        channel: packet.source_channel.clone(),
                        sequence: packet.sequence,
                    },
                    EventKind::RecvPacket { packet } => Entry::Recv {
                        ledger: l,
                        port: packet.dest_port.clone(),
                        channel: packet.dest_channel.clone(),
                        sequence: packet.sequence,
                    },
                    EventKind::AcknowledgePacket { packet } => Entry::Ack {
                        ledger: l,
                        port: packet.source_port.clone(),
                        channel: packet.source_channel.clone(),
                        sequence: packet.sequence,
                    },
                    EventKind::TimeoutPacket { packet, on_close } => Entry::Timeout {
                        ledger: l,
                        port: packet.source_port.clone(),
                        channel: packet.source_channel.clone(),
                        sequence: packet.sequence,
                        on_close: *on_close,
                    },
                    EventKind::CleanupPacket { packet } => Entry::Cleanup {
                        ledger: l,
                        port: packet.source_port.clone(),
                        channel: packet.source_channel.clone(),
                        sequence: packet.sequence,
                    },
                    EventKind::ChannelClosed { port, channel } => {
                        Entry::ChannelClosed { ledger: l, port: port.clone(), channel: channel.clone() }
                    }
                    EventKind::ClientFrozen { client, height } => {
                        Entry::ClientFrozen { ledger: l, client: client.clone(), height: *height }
                    }
                    _ => continue,
                };
                entries.push(entry);
            }
        }
        for e in entries {
            self.push(e);
        }
    }

    fn record_state(&mut self) {
        let mut entries = Vec::new();
        for (ledger, denom) in &self.supply {
            let l = self.net.ledger(ledger);
            entries.push(Entry::Supply {
                ledger: ledger.clone(),
                denom: denom.clone(),
                unlocked: transfer::total_balance(l, denom),
                escrowed: transfer::total_escrow(l, denom),
            });
        }
        for l in self.net.iter() {
            let live = l
                .channel_ids()
                .iter()
                .map(|(p, c)| l.packet_commitment_sequences(p, c).len() as u64)
                .sum();
            entries.push(Entry::Commitments { ledger: l.id().clone(), live });
        }
        for e in entries {
            self.push(e);
        }
    }

    fn record_holdings(&mut self) {
        let mut entries = Vec::new();
        for l in self.net.iter() {
            for (port, channel, denom, amount) in transfer::escrows(l) {
                entries.push(Entry::Escrow { ledger: l.id().clone(), port, channel, denom, amount });
            }
            for (port, channel, denom, amount) in transfer::voucher_supplies(l) {
                entries.push(Entry::Vouchers { ledger: l.id().clone(), port, channel, denom, amount });
            }
        }
        for e in entries {
            self.push(e);
        }
    }

    /// Consecutive idle steps after which the run counts as settled: long
    /// enough for the slowest relayer to poll twice.
    fn settle_window(&self) -> u64 {
        2 * self.relayers.iter().map(|r| r.config().poll_every).max().unwrap_or(1) + 2
    }

    /// Some relayer could still submit something other than a client update,
    /// or a live packet has a timeout its destination has yet to pass.
    fn work_pending(&mut self) -> bool {
        let net = &self.net;
        let expiring = self.channels.iter().any(|((l, p, c), ends)| {
            let src = net.ledger(l);
            let dest = net.ledger(&ends.counterparty_ledger);
            src.packet_commitment_sequences(p, c).into_iter().any(|seq| {
                src.sent_packet(p, c, seq).is_some_and(|pkt| {
                    (pkt.timeout_height != 0 && dest.height() < pkt.timeout_height)
                        || (pkt.timeout_timestamp != 0 && dest.timestamp() <= pkt.timeout_timestamp)
                })
            })
        });
        expiring
            || self.relayers.iter_mut().any(|r| {
            [true, false].into_iter().any(|from_a| {
                r.pending_datagrams(net, from_a).iter().any(|d| d.kind() != "ClientUpdate")
            })
        })
    }

    /// Runs until `max_steps`, stopping early once every action has fired,
    /// no ledger is halted and relayers have been idle for a full window.
    /// The simulation stays inspectable afterwards.
    pub fn run(&mut self, max_steps: u64) -> RunOutput {
        let last_action = self.scenario.last_action_step();
        let window = self.settle_window();
        let mut idle = 0;
        let mut quiescent = false;
        while self.step < max_steps {
            let progress = self.step();
            idle = if progress == 0 { idle + 1 } else { 0 };
            let halted = self.net.iter().any(|l| l.is_halted());
            if self.step >= last_action && !halted && idle >= window && !self.work_pending() {
                quiescent = true;
                break;
            }
        }
        self.record_holdings();
        let steps = self.step;
        self.push(Entry::End { steps, quiescent });
        let verdicts = verify_trace(&self.trace, &self.scenario.checks()).expect("runner emits well-formed traces");
        RunOutput { trace: self.trace.clone(), verdicts, steps, quiescent }
    }
}

/// Runs `scenario` with `seed`, stopping after `max_steps` (the scenario's
/// own bound when `None`).
pub fn run_scenario(scenario: &Scenario, seed: u64, max_steps: Option<u64>) -> Result<RunOutput, RunError> {
    let mut sim = Simulation::new(scenario, seed)?;
    Ok(sim.run(max_steps.unwrap_or(scenario.max_steps)))
}
