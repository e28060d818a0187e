//! Seeded random scenarios: a chain of 2-4 ledgers, ordered and unordered
//! transfer channels on every link, one honest relayer per link plus up to
//! two faulty ones, and a burst of transfers, halts and closes.

use ibcsim_core::channel::Order;
use ibcsim_core::ident::{ChannelId, ClientId, ConnectionId, LedgerId};
use ibcsim_core::relayer::{FaultProfile, PathEnd, RelayMode, RelayerConfig};
use ibcsim_core::transfer;
use num_rational::Ratio;
use primitive_types::U256;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::{
    Action, Allocation, ChannelSpec, ClientSpec, ConnectionSpec, LedgerSpec, Scenario, TimedAction,
};

/// Upper bounds on relayer fault probabilities, as (numerator, denominator).
#[derive(Debug, Clone, Copy)]
pub struct FaultBounds {
    pub drop: (u64, u64),
    pub dup: (u64, u64),
    pub reorder: (u64, u64),
    pub corrupt: (u64, u64),
}

impl Default for FaultBounds {
    fn default() -> Self {
        FaultBounds { drop: (1, 2), dup: (1, 2), reorder: (1, 2), corrupt: (1, 5) }
    }
}

pub const ACCOUNTS: [&str; 3] = ["alice", "bob", "carol"];
pub const GENESIS_AMOUNT: u64 = 1_000_000;
/// Actions fire within the first this many steps.
pub const ACTIVE_STEPS: u64 = 40;

fn lid(i: usize) -> LedgerId {
    LedgerId::new(format!("l{i}")).expect("valid id")
}

fn client_for(other: usize) -> ClientId {
    ClientId::new(format!("client-l{other}")).expect("valid id")
}

fn conn_to(other: usize) -> ConnectionId {
    ConnectionId::new(format!("conn-l{other}")).expect("valid id")
}

pub fn native_denom(i: usize) -> String {
    format!("tok{i}")
}

fn ratio_up_to(rng: &mut ChaCha8Rng, (n, d): (u64, u64)) -> Ratio<u64> {
    // Ten steps between zero and the bound.
    let k = rng.gen_range(0..=10u64);
    Ratio::new(n * k, d * 10)
}

/// One transfer channel end.
struct End {
    ledger: usize,
    channel: ChannelId,
    peer: usize,
}

pub fn random_scenario(seed: u64) -> Scenario {
    random_scenario_with(seed, FaultBounds::default())
}

pub fn random_scenario_with(seed: u64, bounds: FaultBounds) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=4usize);
    let ledgers: Vec<LedgerSpec> = (0..n)
        .map(|i| LedgerSpec { id: lid(i), signers: rng.gen_range(1..=4), block_time: 5 })
        .collect();

    let mut clients = Vec::new();
    let mut connections = Vec::new();
    let mut channels = Vec::new();
    let mut relayers = Vec::new();
    let mut ends: Vec<End> = Vec::new();
    let mut next_chan = vec![0usize; n];
    for i in 0..n - 1 {
        let j = i + 1;
        for (host, cp) in [(i, j), (j, i)] {
            clients.push(ClientSpec { host: lid(host), counterparty: lid(cp), id: client_for(cp), trusting_period: 100_000 });
        }
        connections.push(ConnectionSpec {
            a: lid(i),
            a_client: client_for(j),
            a_connection: conn_to(j),
            b: lid(j),
            b_client: client_for(i),
            b_connection: conn_to(i),
        });
        for _ in 0..rng.gen_range(1..=2) {
            let ci = ChannelId::new(format!("ch-{}", next_chan[i])).expect("valid id");
            let cj = ChannelId::new(format!("ch-{}", next_chan[j])).expect("valid id");
            next_chan[i] += 1;
            next_chan[j] += 1;
            let ordering = if rng.gen_bool(0.5) { Order::Ordered } else { Order::Unordered };
            channels.push(ChannelSpec {
                a: lid(i),
                a_connection: conn_to(j),
                a_channel: ci.clone(),
                a_port: transfer::transfer_port(),
                b: lid(j),
                b_channel: cj.clone(),
                b_port: transfer::transfer_port(),
                ordering,
            });
            ends.push(End { ledger: i, channel: ci, peer: j });
            ends.push(End { ledger: j, channel: cj, peer: i });
        }
        let path = |x: usize, y: usize| PathEnd { ledger: lid(x), client: client_for(y) };
        let mut honest = RelayerConfig::new(format!("honest-{i}"), path(i, j), path(j, i));
        honest.mode = if rng.gen_bool(0.5) { RelayMode::Event } else { RelayMode::Query };
        honest.poll_every = rng.gen_range(1..=3);
        honest.bundle = rng.gen_bool(0.3);
        let mut link = vec![honest];
        for k in 0..rng.gen_range(0..=2) {
            let mut faulty = RelayerConfig::new(format!("faulty-{i}-{k}"), path(i, j), path(j, i));
            faulty.mode = if rng.gen_bool(0.5) { RelayMode::Event } else { RelayMode::Query };
            faulty.poll_every = rng.gen_range(1..=3);
            faulty.bundle = rng.gen_bool(0.3);
            faulty.faults = FaultProfile {
                drop: ratio_up_to(&mut rng, bounds.drop),
                dup: ratio_up_to(&mut rng, bounds.dup),
                reorder: ratio_up_to(&mut rng, bounds.reorder),
                corrupt: ratio_up_to(&mut rng, bounds.corrupt),
                seed: rng.gen(),
            };
            link.push(faulty);
        }
        // Relayers act in list order each step; the honest one is not always first.
        link.shuffle(&mut rng);
        relayers.extend(link);
    }

    let genesis = (0..n)
        .flat_map(|i| {
            ACCOUNTS.iter().map(move |a| Allocation {
                ledger: lid(i),
                account: a.to_string(),
                denom: native_denom(i),
                amount: U256::from(GENESIS_AMOUNT),
            })
        })
        .collect();

    let mut actions = Vec::new();
    for _ in 0..rng.gen_range(5..=25) {
        let step = rng.gen_range(1..=ACTIVE_STEPS);
        let end = ends.choose(&mut rng).expect("at least one channel");
        // Native tokens, vouchers coming home over this channel, or vouchers
        // from another channel travelling one hop further.
        let (denom, amount) = match rng.gen_range(0..3) {
            0 => (native_denom(end.ledger), rng.gen_range(1..=5_000u64)),
            1 => (format!("transfer/{}/{}", end.channel, native_denom(end.peer)), rng.gen_range(1..=300)),
            _ => {
                let other = ends.iter().filter(|e| e.ledger == end.ledger).collect::<Vec<_>>();
                let via = other.choose(&mut rng).expect("end itself qualifies");
                (format!("transfer/{}/{}", via.channel, native_denom(via.peer)), rng.gen_range(1..=300))
            }
        };
        // Short timeouts race the relayers' poll intervals.
        let (timeout_blocks, timeout_secs) = match rng.gen_range(0..4) {
            0 => (Some(rng.gen_range(1..=4)), None),
            1 => (None, Some(rng.gen_range(5..=30))),
            _ => (Some(rng.gen_range(20..=200)), None),
        };
        actions.push(TimedAction {
            step,
            action: Action::Transfer {
                ledger: lid(end.ledger),
                channel: end.channel.clone(),
                port: transfer::transfer_port(),
                denom,
                amount: U256::from(amount),
                sender: ACCOUNTS.choose(&mut rng).expect("non-empty").to_string(),
                receiver: ACCOUNTS.choose(&mut rng).expect("non-empty").to_string(),
                timeout_blocks,
                timeout_secs,
            },
        });
    }
    if rng.gen_bool(0.3) {
        let l = rng.gen_range(0..n);
        let start = rng.gen_range(1..=ACTIVE_STEPS);
        actions.push(TimedAction { step: start, action: Action::Halt { ledger: lid(l) } });
        actions.push(TimedAction { step: start + rng.gen_range(1..=10), action: Action::Resume { ledger: lid(l) } });
    }
    if rng.gen_bool(0.2) {
        let end = ends.choose(&mut rng).expect("at least one channel");
        actions.push(TimedAction {
            step: rng.gen_range(1..=ACTIVE_STEPS),
            action: Action::CloseChannel {
                ledger: lid(end.ledger),
                channel: end.channel.clone(),
                port: transfer::transfer_port(),
            },
        });
    }
    // Stable: same-step actions keep generation order.
    actions.sort_by_key(|a| a.step);

    Scenario {
        name: format!("random-{seed}"),
        seed,
        max_steps: 400,
        ledgers,
        clients,
        connections,
        channels,
        relayers,
        genesis,
        actions,
        checks: Vec::new(),
    }
}
