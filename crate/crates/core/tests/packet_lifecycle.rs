mod common;

use common::*;
use ibcsim_core::channel::{ChannelState, Order};
use ibcsim_core::ledger::HandlerError;
use ibcsim_core::router::Datagram;
use ibcsim_core::transfer::{self, TransferRequest};
use primitive_types::U256;

fn send(p: &mut Pair, amount: u64, timeout_height: u64, timeout_timestamp: u64) -> ibcsim_core::channel::Packet {
    let a = p.a.clone();
    let req = TransferRequest {
        port: transfer::transfer_port(),
        channel: p.chan.clone(),
        denom: "atom".into(),
        amount: U256::from(amount),
        sender: "alice".into(),
        receiver: "bob".into(),
        timeout_height,
        timeout_timestamp,
    };
    transfer::send_transfer(p.net.ledger_mut(&a), &req).unwrap()
}

fn funded(order: Order) -> Pair {
    let mut p = Pair::new(order, 4);
    let a = p.a.clone();
    transfer::mint(p.net.ledger_mut(&a), "alice", "atom", U256::from(1000)).unwrap();
    p
}

#[test]
fn height_timeout_refunds_sender() {
    for order in [Order::Unordered, Order::Ordered] {
        let mut p = funded(order);
        let (a, b) = (p.a.clone(), p.b.clone());
        let th = p.net.ledger(&b).height() + 3;
        send(&mut p, 10, th, 0);
        for _ in 0..4 {
            p.net.ledger_mut(&b).produce_block().unwrap();
        }
        p.steps(6);
        assert_eq!(transfer::balance(p.net.ledger(&a), "alice", "atom"), U256::from(1000), "{order:?}");
        assert_eq!(transfer::balance(p.net.ledger(&b), "bob", "transfer/ch-0/atom"), U256::zero());
        let chan = p.net.ledger(&a).channel_end(&transfer::transfer_port(), &p.chan).unwrap();
        let expected = if order == Order::Ordered { ChannelState::Closed } else { ChannelState::Open };
        assert_eq!(chan.state, expected);
        let cp = p.net.ledger(&b).channel_end(&transfer::transfer_port(), &p.chan).unwrap();
        assert_eq!(cp.state, expected, "close propagates to the destination");
    }
}

#[test]
fn timestamp_timeout_after_halt() {
    let mut p = funded(Order::Unordered);
    let (a, b) = (p.a.clone(), p.b.clone());
    let tt = p.net.ledger(&b).timestamp() + 5;
    p.net.ledger_mut(&b).halt();
    send(&mut p, 10, 0, tt);
    p.steps(2);
    p.net.ledger_mut(&b).advance_clock(30);
    p.net.ledger_mut(&b).resume();
    p.steps(6);
    assert_eq!(transfer::balance(p.net.ledger(&a), "alice", "atom"), U256::from(1000));
    assert_eq!(transfer::balance(p.net.ledger(&b), "bob", "transfer/ch-0/atom"), U256::zero());
}

#[test]
fn timeout_on_close_refunds_before_timeout_height() {
    let mut p = funded(Order::Unordered);
    let (a, b) = (p.a.clone(), p.b.clone());
    let th = p.net.ledger(&b).height() + 1_000;
    p.net.ledger_mut(&b).halt();
    send(&mut p, 10, th, 0);
    p.net.ledger_mut(&b).resume();
    let chan = p.chan.clone();
    p.net
        .ledger_mut(&b)
        .execute_transaction(&[Datagram::ChanCloseInit { port: transfer::transfer_port(), channel: chan.clone() }])
        .unwrap();
    p.steps(6);
    assert!(p.net.ledger(&b).height() < th);
    assert_eq!(transfer::balance(p.net.ledger(&a), "alice", "atom"), U256::from(1000));
    assert_eq!(transfer::balance(p.net.ledger(&b), "bob", "transfer/ch-0/atom"), U256::zero());
    let end = p.net.ledger(&a).channel_end(&transfer::transfer_port(), &chan).unwrap();
    assert_eq!(end.state, ChannelState::Closed);
}

#[test]
fn duplicate_receive_aborts() {
    let mut p = funded(Order::Unordered);
    let b = p.b.clone();
    let packet = send(&mut p, 10, 0, 0);
    p.net.produce_blocks();
    let mut dgs = p.relayer.pending_datagrams(&p.net, true);
    assert!(matches!(dgs[0], Datagram::ClientUpdate { .. }));
    assert!(matches!(dgs.last(), Some(Datagram::PacketRecv { .. })));
    p.net.ledger_mut(&b).execute_transaction(&dgs).unwrap();
    let recv = dgs.pop().unwrap();
    let err = p.net.ledger_mut(&b).execute_transaction(&[recv]).unwrap_err();
    assert!(matches!(
        err.reason(),
        Some(HandlerError::Channel(ibcsim_core::channel::ChannelError::DuplicateReceipt(s))) if *s == packet.sequence
    ));
    assert_eq!(transfer::balance(p.net.ledger(&b), "bob", "transfer/ch-0/atom"), U256::from(10));
}

#[test]
fn ordered_out_of_order_receive_aborts() {
    let mut p = funded(Order::Ordered);
    let b = p.b.clone();
    send(&mut p, 1, 0, 0);
    send(&mut p, 2, 0, 0);
    p.net.produce_blocks();
    let dgs = p.relayer.pending_datagrams(&p.net, true);
    let (update, recvs): (Vec<_>, Vec<_>) = dgs.into_iter().partition(|d| matches!(d, Datagram::ClientUpdate { .. }));
    assert_eq!(recvs.len(), 2);
    p.net.ledger_mut(&b).execute_transaction(&update).unwrap();
    let err = p.net.ledger_mut(&b).execute_transaction(&recvs[1..]).unwrap_err();
    assert!(matches!(
        err.reason(),
        Some(HandlerError::Channel(ibcsim_core::channel::ChannelError::OutOfOrder { expected: 1, got: 2 }))
    ));
    p.net.ledger_mut(&b).execute_transaction(&recvs).unwrap();
}

#[test]
fn corrupted_packet_data_is_rejected() {
    let mut p = funded(Order::Unordered);
    let b = p.b.clone();
    send(&mut p, 10, 0, 0);
    p.net.produce_blocks();
    let mut dgs = p.relayer.pending_datagrams(&p.net, true);
    if let Some(pkt) = dgs.last_mut().and_then(Datagram::packet_mut) {
        pkt.data[3] ^= 0x40;
    }
    let err = p.net.ledger_mut(&b).execute_transaction(&dgs).unwrap_err();
    assert!(err.reason().is_some());
    assert_eq!(transfer::balance(p.net.ledger(&b), "bob", "transfer/ch-0/atom"), U256::zero());
}

#[test]
fn bundled_relayer_times_out_an_ordered_backlog() {
    let mut p = funded(Order::Ordered);
    let mut cfg = p.relayer.config().clone();
    cfg.bundle = true;
    p.relayer = ibcsim_core::relayer::Relayer::new(cfg).unwrap();
    let (a, b) = (p.a.clone(), p.b.clone());
    let th = p.net.ledger(&b).height() + 2;
    for _ in 0..3 {
        send(&mut p, 10, th, 0);
    }
    for _ in 0..3 {
        p.net.ledger_mut(&b).produce_block().unwrap();
    }
    p.steps(12);
    let port = transfer::transfer_port();
    assert!(p.net.ledger(&a).packet_commitment_sequences(&port, &p.chan).is_empty());
    assert_eq!(transfer::balance(p.net.ledger(&a), "alice", "atom"), U256::from(1000));
    assert_eq!(p.net.ledger(&b).channel_end(&port, &p.chan).unwrap().state, ChannelState::Closed);
}
