mod common;

use common::*;
use ibcsim_core::channel::{ChannelOpen, ChannelState, Order};
use ibcsim_core::client::ClientError;
use ibcsim_core::connection::ConnectionState;
use ibcsim_core::ident::ConnectionId;
use ibcsim_core::ledger::{HandlerError, Ledger, LedgerConfig};
use ibcsim_core::relayer::{Network, PathEnd, Relayer, RelayerConfig};
use ibcsim_core::router::Datagram;
use ibcsim_core::setup::{self, ChannelSpec, ConnectionSpec};
use ibcsim_core::transfer::{self, TransferRequest};
use primitive_types::U256;

fn conn(s: &str) -> ConnectionId {
    ConnectionId::new(s).unwrap()
}

fn two_ledgers() -> (Network, Relayer) {
    let mut net = Network::new();
    for id in ["a", "b"] {
        let mut l = Ledger::new(LedgerConfig::new(lid(id)));
        transfer::install(&mut l).unwrap();
        net.insert(l);
    }
    net.produce_blocks();
    setup::create_client(&mut net, &lid("a"), &lid("b"), &cid("b-client"), TRUST).unwrap();
    setup::create_client(&mut net, &lid("b"), &lid("a"), &cid("a-client"), TRUST).unwrap();
    let r = Relayer::new(RelayerConfig::new(
        "r",
        PathEnd { ledger: lid("a"), client: cid("b-client") },
        PathEnd { ledger: lid("b"), client: cid("a-client") },
    ))
    .unwrap();
    (net, r)
}

#[test]
fn crossing_connection_inits_both_open() {
    let (mut net, r) = two_ledgers();
    let mut rs = vec![r];
    for (host, client, cp_client) in [("a", "b-client", "a-client"), ("b", "a-client", "b-client")] {
        let prefix = net.ledger(&lid(host)).prefix().clone();
        net.ledger_mut(&lid(host))
            .execute_transaction(&[Datagram::ConnOpenInit {
                connection: conn("c0"),
                counterparty_connection: conn("c0"),
                counterparty_prefix: prefix,
                client: cid(client),
                counterparty_client: cid(cp_client),
            }])
            .unwrap();
    }
    for _ in 0..8 {
        setup::step(&mut net, &mut rs);
    }
    for host in ["a", "b"] {
        assert_eq!(net.ledger(&lid(host)).connection_end(&conn("c0")).unwrap().state, ConnectionState::Open);
    }
}

#[test]
fn connection_to_impostor_is_caught_by_consensus_proof() {
    let (mut net, _) = two_ledgers();
    net.insert(Ledger::new(LedgerConfig::new(lid("c")).with_seed(9)));
    net.produce_blocks();
    // a believes c is b.
    setup::create_client(&mut net, &lid("a"), &lid("c"), &cid("fake-b"), TRUST).unwrap();
    let mut rs = [Relayer::new(RelayerConfig::new(
        "r",
        PathEnd { ledger: lid("a"), client: cid("fake-b") },
        PathEnd { ledger: lid("b"), client: cid("a-client") },
    ))
    .unwrap()];
    let prefix = net.ledger(&lid("b")).prefix().clone();
    net.ledger_mut(&lid("a"))
        .execute_transaction(&[Datagram::ConnOpenInit {
            connection: conn("c0"),
            counterparty_connection: conn("c0"),
            counterparty_prefix: prefix,
            client: cid("fake-b"),
            counterparty_client: cid("a-client"),
        }])
        .unwrap();
    net.produce_blocks();
    let report = rs[0].relay_once(&mut net);
    let try_record = report.records.iter().find(|r| r.datagram == "ConnOpenTry").expect("try submitted");
    assert!(matches!(&try_record.outcome, ibcsim_core::relayer::Outcome::Aborted(reason) if reason.contains("consensus")));
    assert!(net.ledger(&lid("b")).connection_end(&conn("c0")).is_err());
}

#[test]
fn equivocation_freezes_client_and_blocks_packets() {
    let mut p = Pair::new(Order::Unordered, 4);
    let (a, b) = (p.a.clone(), p.b.clone());
    transfer::mint(p.net.ledger_mut(&a), "alice", "atom", U256::from(100)).unwrap();
    p.net.ledger_mut(&a).schedule_equivocation();
    p.step();
    let st = p.net.ledger(&b).client_state(&cid("a-client")).unwrap();
    assert!(st.is_frozen());
    let req = TransferRequest {
        port: transfer::transfer_port(),
        channel: p.chan.clone(),
        denom: "atom".into(),
        amount: U256::from(1),
        sender: "alice".into(),
        receiver: "bob".into(),
        timeout_height: 0,
        timeout_timestamp: 0,
    };
    transfer::send_transfer(p.net.ledger_mut(&a), &req).unwrap();
    p.steps(4);
    assert_eq!(transfer::balance(p.net.ledger(&b), "bob", "transfer/ch-0/atom"), U256::zero());
    // A stale update is refused as well.
    let header = p.net.ledger(&a).header_at(p.net.ledger(&a).height()).unwrap();
    let err = p
        .net
        .ledger_mut(&b)
        .execute_transaction(&[Datagram::ClientUpdate { client: cid("a-client"), header }])
        .unwrap_err();
    assert!(matches!(err.reason(), Some(HandlerError::Client(ClientError::Frozen { .. }))));
}

#[test]
fn loopback_channel_delivers_to_self() {
    let mut net = Network::new();
    let mut l = Ledger::new(LedgerConfig::new(lid("solo")).with_signers(1));
    transfer::install(&mut l).unwrap();
    net.insert(l);
    net.produce_blocks();
    let me = lid("solo");
    setup::create_client(&mut net, &me, &me, &cid("self"), TRUST).unwrap();
    let mut rs = vec![Relayer::new(RelayerConfig::new(
        "r",
        PathEnd { ledger: me.clone(), client: cid("self") },
        PathEnd { ledger: me.clone(), client: cid("self") },
    ))
    .unwrap()];
    setup::open_connection(
        &mut net,
        &mut rs,
        &ConnectionSpec {
            a: me.clone(),
            a_client: cid("self"),
            a_connection: conn("x"),
            b: me.clone(),
            b_client: cid("self"),
            b_connection: conn("y"),
        },
        10,
    )
    .unwrap();
    setup::open_channel(
        &mut net,
        &mut rs,
        &ChannelSpec {
            a: me.clone(),
            a_port: transfer::transfer_port(),
            a_channel: chid("ch-x"),
            a_connection: conn("x"),
            b: me.clone(),
            b_port: transfer::transfer_port(),
            b_channel: chid("ch-y"),
            ordering: Order::Ordered,
            version: transfer::VERSION.into(),
        },
        10,
    )
    .unwrap();
    transfer::mint(net.ledger_mut(&me), "alice", "atom", U256::from(7)).unwrap();
    let req = TransferRequest {
        port: transfer::transfer_port(),
        channel: chid("ch-x"),
        denom: "atom".into(),
        amount: U256::from(7),
        sender: "alice".into(),
        receiver: "bob".into(),
        timeout_height: 0,
        timeout_timestamp: 0,
    };
    transfer::send_transfer(net.ledger_mut(&me), &req).unwrap();
    for _ in 0..4 {
        setup::step(&mut net, &mut rs);
    }
    let l = net.ledger(&me);
    assert_eq!(transfer::balance(l, "bob", "transfer/ch-y/atom"), U256::from(7));
    assert!(l.packet_commitment_sequences(&transfer::transfer_port(), &chid("ch-x")).is_empty());
}

#[test]
fn closed_channel_identifier_cannot_be_reused() {
    let mut p = Pair::new(Order::Unordered, 1);
    let a = p.a.clone();
    let chan = p.chan.clone();
    p.net
        .ledger_mut(&a)
        .execute_transaction(&[Datagram::ChanCloseInit { port: transfer::transfer_port(), channel: chan.clone() }])
        .unwrap();
    p.steps(3);
    assert_eq!(p.net.ledger(&p.b).channel_end(&transfer::transfer_port(), &chan).unwrap().state, ChannelState::Closed);
    let err = p
        .net
        .ledger_mut(&a)
        .execute_transaction(&[Datagram::ChanOpenInit(ChannelOpen {
            ordering: Order::Unordered,
            connection_hops: vec![conn("conn-0")],
            port: transfer::transfer_port(),
            channel: chan,
            counterparty_port: transfer::transfer_port(),
            counterparty_channel: chid("other"),
            version: transfer::VERSION.into(),
        })])
        .unwrap_err();
    assert!(matches!(
        err.reason(),
        Some(HandlerError::Channel(ibcsim_core::channel::ChannelError::IdentifierInUse { .. }))
    ));
}

#[test]
fn unregistered_port_aborts_without_state_change() {
    let (mut net, _) = two_ledgers();
    let root_before = net.ledger(&lid("a")).get_working("channelEnds/ports/nobody/channels/ch");
    let err = net
        .ledger_mut(&lid("a"))
        .execute_transaction(&[Datagram::ChanOpenInit(ChannelOpen {
            ordering: Order::Unordered,
            connection_hops: vec![conn("c0")],
            port: port("nobody"),
            channel: chid("ch"),
            counterparty_port: port("nobody"),
            counterparty_channel: chid("ch"),
            version: "v".into(),
        })])
        .unwrap_err();
    assert!(matches!(err.reason(), Some(HandlerError::UnknownPort(_))));
    assert_eq!(net.ledger(&lid("a")).get_working("channelEnds/ports/nobody/channels/ch"), root_before);
}
