#![allow(dead_code)]

use ibcsim_core::channel::Order;
use ibcsim_core::ident::{ChannelId, ClientId, ConnectionId, LedgerId, PortId};
use ibcsim_core::ledger::{Ledger, LedgerConfig};
use ibcsim_core::relayer::{Network, PathEnd, Relayer, RelayerConfig};
use ibcsim_core::setup::{self, ChannelSpec, ConnectionSpec};
use ibcsim_core::transfer;

pub fn lid(s: &str) -> LedgerId {
    LedgerId::new(s).unwrap()
}

pub fn cid(s: &str) -> ClientId {
    ClientId::new(s).unwrap()
}

pub fn chid(s: &str) -> ChannelId {
    ChannelId::new(s).unwrap()
}

pub fn port(s: &str) -> PortId {
    PortId::new(s).unwrap()
}

pub const TRUST: u64 = 10_000;

/// Two ledgers `a` and `b` with transfer installed, clients `b-client` on a
/// and `a-client` on b, connection `conn-0` on both and one open transfer
/// channel `ch-0` on both.
pub struct Pair {
    pub net: Network,
    pub relayer: Relayer,
    pub a: LedgerId,
    pub b: LedgerId,
    pub chan: ChannelId,
}

impl Pair {
    pub fn new(order: Order, signers: usize) -> Pair {
        let (a, b) = (lid("a"), lid("b"));
        let mut net = Network::new();
        for id in [&a, &b] {
            let mut l = Ledger::new(LedgerConfig::new(id.clone()).with_signers(signers));
            transfer::install(&mut l).unwrap();
            net.insert(l);
        }
        net.produce_blocks();
        setup::create_client(&mut net, &a, &b, &cid("b-client"), TRUST).unwrap();
        setup::create_client(&mut net, &b, &a, &cid("a-client"), TRUST).unwrap();
        let relayer = Relayer::new(RelayerConfig::new(
            "r0",
            PathEnd { ledger: a.clone(), client: cid("b-client") },
            PathEnd { ledger: b.clone(), client: cid("a-client") },
        ))
        .unwrap();
        let mut relayers = vec![relayer];
        let conn = ConnectionId::new("conn-0").unwrap();
        setup::open_connection(
            &mut net,
            &mut relayers,
            &ConnectionSpec {
                a: a.clone(),
                a_client: cid("b-client"),
                a_connection: conn.clone(),
                b: b.clone(),
                b_client: cid("a-client"),
                b_connection: conn.clone(),
            },
            20,
        )
        .unwrap();
        let chan = chid("ch-0");
        setup::open_channel(
            &mut net,
            &mut relayers,
            &ChannelSpec {
                a: a.clone(),
                a_port: transfer::transfer_port(),
                a_channel: chan.clone(),
                a_connection: conn.clone(),
                b: b.clone(),
                b_port: transfer::transfer_port(),
                b_channel: chan.clone(),
                ordering: order,
                version: transfer::VERSION.to_string(),
            },
            20,
        )
        .unwrap();
        let relayer = relayers.pop().unwrap();
        Pair { net, relayer, a, b, chan }
    }

    pub fn step(&mut self) {
        setup::step(&mut self.net, std::slice::from_mut(&mut self.relayer));
    }

    pub fn steps(&mut self, n: usize) {
        for _ in 0..n {
            self.step();
        }
    }
}
