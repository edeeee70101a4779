//! Golden-vector text format for frame conformance.
//!
//! One vector per line:
//!
//! ```text
//! PRIM addr cmd [payload] -> events
//! WB 54 00 01   -> S 6C 00 01 P
//! WW 54 21 0E66 -> S 6C 21 66 0E P
//! RW 53 8B      -> S 6A 8B Sr 6B rd rd P
//! ```
//!
//! `addr` is the 7-bit address in decimal, `cmd` and payload are hex
//! (payload is one byte for `WB`, one 16-bit word for `WW`). On the right,
//! `S`/`Sr`/`P` are Start/RepeatedStart/Stop, two hex digits are a
//! master-driven byte and `rd` a slave-driven byte. `#` starts a comment.

use thiserror::Error;

use super::{frame, Ack, BusEvent, PmbusCommand, Primitive, Transaction, WireFrame};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenVector {
    pub line: usize,
    pub transaction: Transaction,
    pub expected: WireFrame,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("golden vector line {line}: {reason}")]
pub struct GoldenError {
    pub line: usize,
    pub reason: String,
}

fn hex_u8(s: &str) -> Option<u8> {
    (s.len() == 2).then(|| u8::from_str_radix(s, 16).ok()).flatten()
}

fn parse_events(rhs: &str) -> Option<Vec<BusEvent>> {
    let mut events = Vec::new();
    for tok in rhs.split_whitespace() {
        events.push(match tok {
            "S" => BusEvent::Start,
            "Sr" => BusEvent::RepeatedStart,
            "P" => BusEvent::Stop,
            "rd" => BusEvent::Read {
                value: None,
                ack: Ack::Ack,
            },
            t => BusEvent::Write(hex_u8(t)?),
        });
    }
    // The final slave-driven byte of a read carries the master's NACK.
    if let Some(BusEvent::Read { ack, .. }) = events.iter_mut().rev().find(|e| matches!(e, BusEvent::Read { .. })) {
        *ack = Ack::Nack;
    }
    Some(events)
}

/// Parse one non-comment line. Returns `Ok(None)` for blank or comment lines.
pub fn parse_line(line_no: usize, line: &str) -> Result<Option<GoldenVector>, GoldenError> {
    let fail = |reason: &str| GoldenError {
        line: line_no,
        reason: reason.to_string(),
    };
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let (lhs, rhs) = line.split_once("->").ok_or_else(|| fail("missing '->'"))?;
    let mut toks = lhs.split_whitespace();
    let primitive = toks
        .next()
        .and_then(Primitive::from_mnemonic)
        .ok_or_else(|| fail("unknown primitive"))?;
    let address: u8 = toks
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| fail("bad address"))?;
    let code = toks.next().and_then(hex_u8).ok_or_else(|| fail("bad command"))?;
    let command = PmbusCommand::try_from(code).map_err(|e| fail(&e.to_string()))?;
    let data = match toks.next() {
        None => None,
        Some(s) => Some(u16::from_str_radix(s, 16).map_err(|_| fail("bad payload"))?),
    };
    if toks.next().is_some() {
        return Err(fail("trailing tokens before '->'"));
    }
    let transaction =
        Transaction::new(primitive, address, command, data).map_err(|e| fail(&e.to_string()))?;
    let events = parse_events(rhs).ok_or_else(|| fail("bad event token"))?;
    Ok(Some(GoldenVector {
        line: line_no,
        transaction,
        expected: WireFrame { events },
    }))
}

pub fn parse_file(text: &str) -> Result<Vec<GoldenVector>, GoldenError> {
    text.lines()
        .enumerate()
        .filter_map(|(i, l)| parse_line(i + 1, l).transpose())
        .collect()
}

/// Render a transaction as a golden-vector line.
pub fn format_line(txn: &Transaction) -> String {
    let mut lhs = format!(
        "{} {} {:02X}",
        txn.primitive().mnemonic(),
        txn.address(),
        txn.command().code()
    );
    match (txn.primitive(), txn.data()) {
        (Primitive::WriteByte, Some(d)) => lhs.push_str(&format!(" {d:02X}")),
        (Primitive::WriteWord, Some(d)) => lhs.push_str(&format!(" {d:04X}")),
        _ => {}
    }
    format!("{lhs} -> {}", frame(txn))
}
