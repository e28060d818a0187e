//! Fungible token transfer over channels: escrow and mint on the way out,
//! burn and unescrow on the way back, refunds on failure or timeout.
//!
//! Denominations carry their path. A receiver mints `{destPort}/{destChannel}/{denom}`
//! unless the denom starts with the packet's source `{port}/{channel}/`, in
//! which case the asset is returning home and the prefix is stripped.

use std::collections::BTreeMap;
use std::sync::Arc;

use primitive_types::U256;
use thiserror::Error;

use crate::channel::Packet;
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::ident::{ChannelId, PortId};
use crate::ledger::{HandlerError, Ledger, PortError, TxError};
use crate::router::{Module, ModuleCtx};

pub const VERSION: &str = "fungible-1";
pub const MODULE_NAME: &str = "transfer";

pub fn transfer_port() -> PortId {
    PortId::new("transfer").expect("valid port")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferData {
    pub denom: String,
    pub amount: U256,
    pub sender: String,
    pub receiver: String,
}

impl Canonical for TransferData {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.denom).raw(&self.amount.to_big_endian()).str(&self.sender).str(&self.receiver);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(TransferData {
            denom: dec.string()?,
            amount: U256::from_big_endian(&dec.raw::<32>()?),
            sender: dec.string()?,
            receiver: dec.string()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransferAck {
    Success,
    Failure(String),
}

impl TransferAck {
    pub fn is_success(&self) -> bool {
        matches!(self, TransferAck::Success)
    }
}

impl Canonical for TransferAck {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            TransferAck::Success => enc.bool(true).option::<String>(None),
            TransferAck::Failure(e) => enc.bool(false).option(Some(e)),
        };
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match (dec.bool()?, dec.option::<String>()?) {
            (true, None) => Ok(TransferAck::Success),
            (false, Some(e)) => Ok(TransferAck::Failure(e)),
            _ => Err(DecodeError::Invalid("acknowledgement success flag and error disagree".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransferError {
    #[error("{account} holds {balance} {denom}, needs {amount}")]
    InsufficientBalance { account: String, denom: String, balance: U256, amount: U256 },
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("invalid account {0:?}")]
    InvalidAccount(String),
    #[error("invalid denomination {0:?}")]
    InvalidDenom(String),
    #[error("balance overflow")]
    Overflow,
    #[error(transparent)]
    Tx(#[from] TxError),
}

/// Accounts are 1-64 chars of `[A-Za-z0-9._-]`.
pub fn valid_account(a: &str) -> bool {
    !a.is_empty() && a.len() <= 64 && a.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b))
}

/// Non-empty `/`-separated segments of `[A-Za-z0-9._-]`.
pub fn valid_denom(d: &str) -> bool {
    !d.is_empty()
        && d.len() <= 512
        && d.split('/').all(|seg| !seg.is_empty() && seg.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b)))
}

pub fn hop_prefix(port: &PortId, chan: &ChannelId) -> String {
    format!("{port}/{chan}/")
}

fn bal_key(account: &str, denom: &str) -> String {
    format!("bal/{account}/{denom}")
}

fn escrow_key(port: &PortId, chan: &ChannelId, denom: &str) -> String {
    format!("escrow/{port}/{chan}/{denom}")
}

fn voucher_key(port: &PortId, chan: &ChannelId, denom: &str) -> String {
    format!("vouchers/{port}/{chan}/{denom}")
}

fn decode_amount(bytes: Option<Vec<u8>>) -> U256 {
    bytes.map_or(U256::zero(), |b| U256::from_big_endian(&b))
}

fn encode_amount(v: U256) -> Vec<u8> {
    v.to_big_endian().to_vec()
}

struct Accounts<'c, 'a> {
    ctx: &'c mut ModuleCtx<'a>,
}

impl Accounts<'_, '_> {
    fn get(&self, key: &str) -> U256 {
        decode_amount(self.ctx.get(key))
    }

    fn put(&mut self, key: &str, v: U256) {
        if v.is_zero() {
            self.ctx.delete(key);
        } else {
            self.ctx.set(key, encode_amount(v));
        }
    }

    fn add(&mut self, key: &str, v: U256) -> Result<(), TransferError> {
        let sum = self.get(key).checked_add(v).ok_or(TransferError::Overflow)?;
        self.put(key, sum);
        Ok(())
    }

    /// Debits `v` or returns the current value unchanged.
    fn sub(&mut self, key: &str, v: U256) -> Result<(), U256> {
        let cur = self.get(key);
        let rest = cur.checked_sub(v).ok_or(cur)?;
        self.put(key, rest);
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct TransferModule;

impl TransferModule {
    pub fn new() -> Arc<Self> {
        Arc::new(TransferModule)
    }

    /// Returns the tokens of a packet that did not arrive to its sender.
    fn refund(&self, ctx: &mut ModuleCtx<'_>, packet: &Packet) -> Result<(), HandlerError> {
        let data = TransferData::from_bytes(&packet.data)
            .map_err(|e| HandlerError::Module(format!("own packet undecodable: {e}")))?;
        let (port, chan) = (&packet.source_port, &packet.source_channel);
        let returning = data.denom.starts_with(&hop_prefix(port, chan));
        let mut acc = Accounts { ctx };
        if returning {
            acc.add(&voucher_key(port, chan, &data.denom), data.amount)
                .map_err(|e| HandlerError::Module(e.to_string()))?;
        } else {
            acc.sub(&escrow_key(port, chan, &data.denom), data.amount)
                .map_err(|_| HandlerError::Module("escrow underflow on refund".into()))?;
        }
        acc.add(&bal_key(&data.sender, &data.denom), data.amount)
            .map_err(|e| HandlerError::Module(e.to_string()))?;
        ctx.emit("refund", attrs(&data, packet));
        Ok(())
    }

    fn receive(&self, ctx: &mut ModuleCtx<'_>, packet: &Packet) -> TransferAck {
        let data = match TransferData::from_bytes(&packet.data) {
            Ok(d) => d,
            Err(e) => return TransferAck::Failure(format!("malformed packet data: {e}")),
        };
        if data.amount.is_zero() {
            return TransferAck::Failure("zero amount".into());
        }
        if !valid_denom(&data.denom) {
            return TransferAck::Failure("malformed denomination".into());
        }
        if !valid_account(&data.receiver) {
            return TransferAck::Failure("bad receiver".into());
        }
        let (port, chan) = (&packet.dest_port, &packet.dest_channel);
        let source_prefix = hop_prefix(&packet.source_port, &packet.source_channel);
        let mut acc = Accounts { ctx };
        let credited = if let Some(base) = data.denom.strip_prefix(&source_prefix) {
            if acc.sub(&escrow_key(port, chan, base), data.amount).is_err() {
                return TransferAck::Failure("containment: amount exceeds channel escrow".into());
            }
            base.to_string()
        } else {
            let voucher = format!("{}{}", hop_prefix(port, chan), data.denom);
            if acc.add(&voucher_key(port, chan, &voucher), data.amount).is_err() {
                return TransferAck::Failure("voucher supply overflow".into());
            }
            voucher
        };
        if acc.add(&bal_key(&data.receiver, &credited), data.amount).is_err() {
            return TransferAck::Failure("balance overflow".into());
        }
        let mut a = attrs(&data, packet);
        a.insert("credited_denom".into(), credited);
        ctx.emit("receive", a);
        TransferAck::Success
    }
}

fn attrs(data: &TransferData, packet: &Packet) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("denom".to_string(), data.denom.clone()),
        ("amount".to_string(), data.amount.to_string()),
        ("sender".to_string(), data.sender.clone()),
        ("receiver".to_string(), data.receiver.clone()),
        ("sequence".to_string(), packet.sequence.to_string()),
    ])
}

impl Module for TransferModule {
    fn name(&self) -> &str {
        MODULE_NAME
    }

    fn on_chan_open_init(&self, _ctx: &mut ModuleCtx<'_>, open: &crate::channel::ChannelOpen) -> Result<(), HandlerError> {
        if open.version != VERSION {
            return Err(HandlerError::Module(format!("unsupported version {:?}", open.version)));
        }
        Ok(())
    }

    fn on_chan_open_try(
        &self,
        _ctx: &mut ModuleCtx<'_>,
        open: &crate::channel::ChannelOpen,
        counterparty_version: &str,
    ) -> Result<(), HandlerError> {
        if open.version != VERSION || counterparty_version != VERSION {
            return Err(HandlerError::Module(format!("unsupported version {counterparty_version:?}")));
        }
        Ok(())
    }

    fn on_chan_open_ack(
        &self,
        _ctx: &mut ModuleCtx<'_>,
        _channel: &ChannelId,
        counterparty_version: &str,
    ) -> Result<(), HandlerError> {
        if counterparty_version != VERSION {
            return Err(HandlerError::Module(format!("unsupported version {counterparty_version:?}")));
        }
        Ok(())
    }

    fn on_recv_packet(&self, ctx: &mut ModuleCtx<'_>, packet: &Packet) -> Result<Vec<u8>, HandlerError> {
        Ok(self.receive(ctx, packet).to_bytes())
    }

    fn on_acknowledge_packet(&self, ctx: &mut ModuleCtx<'_>, packet: &Packet, ack: &[u8]) -> Result<(), HandlerError> {
        match TransferAck::from_bytes(ack) {
            Ok(TransferAck::Success) => Ok(()),
            // An undecodable ack cannot confirm delivery; treat it as failure.
            Ok(TransferAck::Failure(_)) | Err(_) => self.refund(ctx, packet),
        }
    }

    fn on_timeout_packet(&self, ctx: &mut ModuleCtx<'_>, packet: &Packet) -> Result<(), HandlerError> {
        self.refund(ctx, packet)
    }
}

/// Registers the transfer module on the `transfer` port.
pub fn install(ledger: &mut Ledger) -> Result<(), PortError> {
    ledger.register_module(&transfer_port(), TransferModule::new())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferRequest {
    pub port: PortId,
    pub channel: ChannelId,
    pub denom: String,
    pub amount: U256,
    pub sender: String,
    pub receiver: String,
    pub timeout_height: u64,
    pub timeout_timestamp: u64,
}

/// Escrows or burns the sender's tokens and sends the packet, atomically.
pub fn send_transfer(ledger: &mut Ledger, req: &TransferRequest) -> Result<Packet, TransferError> {
    if req.amount.is_zero() {
        return Err(TransferError::ZeroAmount);
    }
    if !valid_account(&req.sender) {
        return Err(TransferError::InvalidAccount(req.sender.clone()));
    }
    if !valid_denom(&req.denom) {
        return Err(TransferError::InvalidDenom(req.denom.clone()));
    }
    let balance = balance(ledger, &req.sender, &req.denom);
    if balance < req.amount {
        return Err(TransferError::InsufficientBalance {
            account: req.sender.clone(),
            denom: req.denom.clone(),
            balance,
            amount: req.amount,
        });
    }
    let packet = ledger.module_call(&req.port, |ctx| {
        let mut acc = Accounts { ctx };
        acc.sub(&bal_key(&req.sender, &req.denom), req.amount)
            .map_err(|_| HandlerError::Module("insufficient balance".into()))?;
        let returning = req.denom.starts_with(&hop_prefix(&req.port, &req.channel));
        if returning {
            acc.sub(&voucher_key(&req.port, &req.channel, &req.denom), req.amount)
                .map_err(|_| HandlerError::Module("burn exceeds vouchers minted over this channel".into()))?;
        } else {
            acc.add(&escrow_key(&req.port, &req.channel, &req.denom), req.amount)
                .map_err(|e| HandlerError::Module(e.to_string()))?;
        }
        let data = TransferData {
            denom: req.denom.clone(),
            amount: req.amount,
            sender: req.sender.clone(),
            receiver: req.receiver.clone(),
        };
        let packet = ctx.send_packet(&req.channel, req.timeout_height, req.timeout_timestamp, data.to_bytes())?;
        ctx.emit("send", attrs(&data, &packet));
        Ok(packet)
    })?;
    Ok(packet)
}

/// Credits an account out of thin air: genesis allocation of a native denom.
pub fn mint(ledger: &mut Ledger, account: &str, denom: &str, amount: U256) -> Result<(), TransferError> {
    if !valid_account(account) {
        return Err(TransferError::InvalidAccount(account.to_string()));
    }
    if !valid_denom(denom) {
        return Err(TransferError::InvalidDenom(denom.to_string()));
    }
    ledger.module_call(&transfer_port(), |ctx| {
        Accounts { ctx }.add(&bal_key(account, denom), amount).map_err(|e| HandlerError::Module(e.to_string()))
    })?;
    Ok(())
}

/// Faulty-ledger behaviour: mints vouchers of `denom` as if they had been
/// received over (`port`, `chan`), without any backing escrow.
pub fn byzantine_mint(
    ledger: &mut Ledger,
    port: &PortId,
    chan: &ChannelId,
    account: &str,
    denom: &str,
    amount: U256,
) -> Result<(), TransferError> {
    ledger.module_call(port, |ctx| {
        let mut acc = Accounts { ctx };
        acc.add(&voucher_key(port, chan, denom), amount).map_err(|e| HandlerError::Module(e.to_string()))?;
        acc.add(&bal_key(account, denom), amount).map_err(|e| HandlerError::Module(e.to_string()))
    })?;
    Ok(())
}

fn app_get(ledger: &Ledger, key: &str) -> U256 {
    decode_amount(ledger.private.get(&format!("app/{MODULE_NAME}/{key}")))
}

fn app_scan(ledger: &Ledger, prefix: &str) -> Vec<(String, U256)> {
    let ns = format!("app/{MODULE_NAME}/{prefix}");
    ledger
        .private
        .keys_with_prefix(&ns)
        .into_iter()
        .map(|k| {
            let v = decode_amount(ledger.private.get(&k));
            (k[ns.len()..].to_string(), v)
        })
        .collect()
}

pub fn balance(ledger: &Ledger, account: &str, denom: &str) -> U256 {
    app_get(ledger, &bal_key(account, denom))
}

pub fn escrowed(ledger: &Ledger, port: &PortId, chan: &ChannelId, denom: &str) -> U256 {
    app_get(ledger, &escrow_key(port, chan, denom))
}

pub fn vouchers_outstanding(ledger: &Ledger, port: &PortId, chan: &ChannelId, denom: &str) -> U256 {
    app_get(ledger, &voucher_key(port, chan, denom))
}

/// Every non-zero (account, denom, amount).
pub fn balances(ledger: &Ledger) -> Vec<(String, String, U256)> {
    app_scan(ledger, "bal/")
        .into_iter()
        .filter_map(|(k, v)| {
            let (acct, denom) = k.split_once('/')?;
            Some((acct.to_string(), denom.to_string(), v))
        })
        .collect()
}

/// Every non-zero escrow as (port, channel, denom, amount).
pub fn escrows(ledger: &Ledger) -> Vec<(PortId, ChannelId, String, U256)> {
    per_channel(app_scan(ledger, "escrow/"))
}

/// Every non-zero voucher supply as (port, channel, denom, amount), keyed by
/// the channel the vouchers arrived on.
pub fn voucher_supplies(ledger: &Ledger) -> Vec<(PortId, ChannelId, String, U256)> {
    per_channel(app_scan(ledger, "vouchers/"))
}

fn per_channel(entries: Vec<(String, U256)>) -> Vec<(PortId, ChannelId, String, U256)> {
    entries
        .into_iter()
        .filter(|(_, v)| !v.is_zero())
        .filter_map(|(k, v)| {
            let mut parts = k.splitn(3, '/');
            let port = PortId::new(parts.next()?).ok()?;
            let chan = ChannelId::new(parts.next()?).ok()?;
            Some((port, chan, parts.next()?.to_string(), v))
        })
        .collect()
}

/// Sum of all account balances of `denom`.
pub fn total_balance(ledger: &Ledger, denom: &str) -> U256 {
    balances(ledger).into_iter().filter(|(_, d, _)| d == denom).fold(U256::zero(), |s, (_, _, v)| s + v)
}

/// Sum of escrow of `denom` over every channel.
pub fn total_escrow(ledger: &Ledger, denom: &str) -> U256 {
    app_scan(ledger, "escrow/")
        .into_iter()
        .filter(|(k, _)| k.splitn(3, '/').nth(2) == Some(denom))
        .fold(U256::zero(), |s, (_, v)| s + v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_round_trip() {
        let d = TransferData {
            denom: "transfer/ch-0/atom".into(),
            amount: U256::MAX,
            sender: "alice".into(),
            receiver: "bob".into(),
        };
        assert_eq!(TransferData::from_bytes(&d.to_bytes()).unwrap(), d);
    }

    #[test]
    fn ack_encoding_is_strict() {
        for a in [TransferAck::Success, TransferAck::Failure("x".into())] {
            assert_eq!(TransferAck::from_bytes(&a.to_bytes()).unwrap(), a);
        }
        let mut bad = Encoder::new();
        bad.bool(true).option(Some(&"x".to_string()));
        assert!(TransferAck::from_bytes(&bad.finish()).is_err());
    }

    #[test]
    fn account_and_denom_syntax() {
        assert!(valid_account("alice-1"));
        assert!(!valid_account(""));
        assert!(!valid_account("a/b"));
        assert!(valid_denom("transfer/ch-0/atom"));
        assert!(!valid_denom("transfer//atom"));
        assert!(!valid_denom("/atom"));
    }
}
