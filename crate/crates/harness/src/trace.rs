//! Execution traces: one JSON object per line, in the order things happened.

use std::io::{BufRead, Write};

use ibcsim_core::channel::Order;
use ibcsim_core::ident::{ChannelId, ClientId, LedgerId, PortId};
use primitive_types::U256;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::dec_u256;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trace at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    #[serde(flatten)]
    pub entry: Entry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Entry {
    Header {
        scenario: String,
        seed: u64,
    },
    Client {
        ledger: LedgerId,
        client: ClientId,
        tracks: LedgerId,
    },
    Channel {
        ledger: LedgerId,
        port: PortId,
        channel: ChannelId,
        client: ClientId,
        ordering: Order,
        counterparty_ledger: LedgerId,
        counterparty_port: PortId,
        counterparty_channel: ChannelId,
    },
    Relayer {
        id: String,
        a: LedgerId,
        a_client: ClientId,
        b: LedgerId,
        b_client: ClientId,
        poll_every: u64,
    },
    Action {
        ledger: LedgerId,
        action: String,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    Send {
        ledger: LedgerId,
        port: PortId,
        channel: ChannelId,
        sequence: u64,
    },
    /// Receipt on the destination, keyed by the destination channel end.
    Recv {
        ledger: LedgerId,
        port: PortId,
        channel: ChannelId,
        sequence: u64,
    },
    Ack {
        ledger: LedgerId,
        port: PortId,
        channel: ChannelId,
        sequence: u64,
    },
    Timeout {
        ledger: LedgerId,
        port: PortId,
        channel: ChannelId,
        sequence: u64,
        on_close: bool,
    },
    Cleanup {
        ledger: LedgerId,
        port: PortId,
        channel: ChannelId,
        sequence: u64,
    },
    ChannelClosed {
        ledger: LedgerId,
        port: PortId,
        channel: ChannelId,
    },
    ClientFrozen {
        ledger: LedgerId,
        client: ClientId,
        height: u64,
    },
    Submission {
        relayer: String,
        target: LedgerId,
        datagram: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sequence: Option<u64>,
        applied: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    /// Holdings of a base denom on the ledger that issued it.
    Supply {
        ledger: LedgerId,
        denom: String,
        #[serde(with = "dec_u256")]
        unlocked: U256,
        #[serde(with = "dec_u256")]
        escrowed: U256,
    },
    /// Live packet commitments on a ledger after the step.
    Commitments {
        ledger: LedgerId,
        live: u64,
    },
    Escrow {
        ledger: LedgerId,
        port: PortId,
        channel: ChannelId,
        denom: String,
        #[serde(with = "dec_u256")]
        amount: U256,
    },
    Vouchers {
        ledger: LedgerId,
        port: PortId,
        channel: ChannelId,
        denom: String,
        #[serde(with = "dec_u256")]
        amount: U256,
    },
    End {
        steps: u64,
        quiescent: bool,
    },
}

pub fn write_jsonl(records: &[TraceRecord], mut out: impl Write) -> Result<(), TraceError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn to_jsonl(records: &[TraceRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(records, &mut buf).expect("writing to memory");
    buf
}

/// Parses a trace. Blank lines are skipped; anything else that is not a
/// record is an error.
pub fn read_jsonl(input: impl BufRead) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| TraceError::Malformed { line: i + 1, message: e.to_string() })?;
        records.push(rec);
    }
    Ok(records)
}
