mod common;

use common::*;
use ibcsim_core::channel::Order;
use ibcsim_core::transfer::{self, TransferError, TransferRequest};
use primitive_types::U256;

fn request(p: &Pair, denom: &str, amount: u64, sender: &str, receiver: &str) -> TransferRequest {
    TransferRequest {
        port: transfer::transfer_port(),
        channel: p.chan.clone(),
        denom: denom.into(),
        amount: U256::from(amount),
        sender: sender.into(),
        receiver: receiver.into(),
        timeout_height: 0,
        timeout_timestamp: 0,
    }
}

#[test]
fn round_trip_restores_balances() {
    for order in [Order::Unordered, Order::Ordered] {
        let mut p = Pair::new(order, 4);
        let (a, b) = (p.a.clone(), p.b.clone());
        transfer::mint(p.net.ledger_mut(&a), "alice", "atom", U256::from(1000)).unwrap();
        let req = request(&p, "atom", 100, "alice", "bob");
        transfer::send_transfer(p.net.ledger_mut(&a), &req).unwrap();
        p.steps(4);
        let voucher = "transfer/ch-0/atom";
        assert_eq!(transfer::balance(p.net.ledger(&a), "alice", "atom"), U256::from(900));
        assert_eq!(transfer::escrowed(p.net.ledger(&a), &transfer::transfer_port(), &p.chan, "atom"), U256::from(100));
        assert_eq!(transfer::balance(p.net.ledger(&b), "bob", voucher), U256::from(100));
        assert!(p.net.ledger(&a).packet_commitment_sequences(&transfer::transfer_port(), &p.chan).is_empty());

        let back = request(&p, voucher, 100, "bob", "alice");
        transfer::send_transfer(p.net.ledger_mut(&b), &back).unwrap();
        p.steps(4);
        assert_eq!(transfer::balance(p.net.ledger(&a), "alice", "atom"), U256::from(1000));
        assert_eq!(transfer::balance(p.net.ledger(&b), "bob", voucher), U256::zero());
        assert_eq!(transfer::escrowed(p.net.ledger(&a), &transfer::transfer_port(), &p.chan, "atom"), U256::zero());
    }
}

#[test]
fn insufficient_balance_is_rejected() {
    let mut p = Pair::new(Order::Unordered, 1);
    let a = p.a.clone();
    transfer::mint(p.net.ledger_mut(&a), "alice", "atom", U256::from(5)).unwrap();
    let req = request(&p, "atom", 6, "alice", "bob");
    assert!(matches!(
        transfer::send_transfer(p.net.ledger_mut(&a), &req),
        Err(TransferError::InsufficientBalance { .. })
    ));
}

#[test]
fn bad_receiver_refunds_sender() {
    let mut p = Pair::new(Order::Unordered, 4);
    let a = p.a.clone();
    transfer::mint(p.net.ledger_mut(&a), "alice", "atom", U256::from(50)).unwrap();
    let req = request(&p, "atom", 50, "alice", "no/such");
    transfer::send_transfer(p.net.ledger_mut(&a), &req).unwrap();
    assert_eq!(transfer::balance(p.net.ledger(&a), "alice", "atom"), U256::zero());
    p.steps(5);
    assert_eq!(transfer::balance(p.net.ledger(&a), "alice", "atom"), U256::from(50));
    assert_eq!(transfer::escrowed(p.net.ledger(&a), &transfer::transfer_port(), &p.chan, "atom"), U256::zero());
}
