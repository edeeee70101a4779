//! Event-level framing of transactions on the two-wire bus.
//!
//! ACK slots are symbolic: a master-driven byte expects the slave to ACK on
//! the ninth clock, and a slave-driven byte carries the master's ACK (or the
//! terminating NACK on the last read byte).

use std::fmt;

use thiserror::Error;

use super::{PmbusCommand, Primitive, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ack {
    Ack,
    Nack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BusEvent {
    Start,
    RepeatedStart,
    Stop,
    /// Master-driven byte; the slave is expected to ACK.
    Write(u8),
    /// Slave-driven byte. `value` is `None` until the device supplies it.
    Read { value: Option<u8>, ack: Ack },
}

impl BusEvent {
    pub fn is_byte(&self) -> bool {
        matches!(self, BusEvent::Write(_) | BusEvent::Read { .. })
    }

    /// Every byte event owns exactly one ninth-clock ACK slot.
    pub fn ack_slot(&self) -> Option<Ack> {
        match self {
            BusEvent::Write(_) => Some(Ack::Ack),
            BusEvent::Read { ack, .. } => Some(*ack),
            _ => None,
        }
    }
}

impl fmt::Display for BusEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BusEvent::Start => f.write_str("S"),
            BusEvent::RepeatedStart => f.write_str("Sr"),
            BusEvent::Stop => f.write_str("P"),
            BusEvent::Write(b) => write!(f, "{b:02X}"),
            BusEvent::Read { value: Some(b), .. } => write!(f, "r{b:02X}"),
            BusEvent::Read { value: None, .. } => f.write_str("rd"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WireFrame {
    pub events: Vec<BusEvent>,
}

impl WireFrame {
    pub fn byte_count(&self) -> usize {
        self.events.iter().filter(|e| e.is_byte()).count()
    }

    /// Fill slave-driven bytes in order. Extra values are ignored.
    pub fn with_read_data(mut self, data: &[u8]) -> Self {
        let mut it = data.iter();
        for ev in &mut self.events {
            if let BusEvent::Read { value, .. } = ev {
                *value = it.next().copied();
            }
        }
        self
    }
}

impl fmt::Display for WireFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, ev) in self.events.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{ev}")?;
        }
        Ok(())
    }
}

fn address_byte(address: u8, read: bool) -> u8 {
    (address << 1) | read as u8
}

/// Serialize a transaction into its ordered bus events.
pub fn frame(txn: &Transaction) -> WireFrame {
    let mut events = vec![
        BusEvent::Start,
        BusEvent::Write(address_byte(txn.address(), false)),
        BusEvent::Write(txn.command().code()),
    ];
    events.extend(txn.payload().into_iter().map(BusEvent::Write));
    if txn.primitive().is_read() {
        events.push(BusEvent::RepeatedStart);
        events.push(BusEvent::Write(address_byte(txn.address(), true)));
        let n = txn.read_len();
        for i in 0..n {
            let ack = if i + 1 == n { Ack::Nack } else { Ack::Ack };
            events.push(BusEvent::Read { value: None, ack });
        }
    }
    events.push(BusEvent::Stop);
    WireFrame { events }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameErrorKind {
    #[error("frame is empty")]
    Empty,
    #[error("expected Start")]
    MissingStart,
    #[error("expected Stop")]
    MissingStop,
    #[error("expected a master-driven byte")]
    ExpectedWrite,
    #[error("expected a slave-driven byte")]
    ExpectedRead,
    #[error("first byte after Start must address the device for write")]
    BadDirection,
    #[error("read phase addresses {found}, write phase addressed {expected}")]
    AddressMismatch { expected: u8, found: u8 },
    #[error("unknown command byte {0:02X}h")]
    UnknownCommand(u8),
    #[error("{command} cannot be carried by {primitive}")]
    Unsupported {
        primitive: Primitive,
        command: PmbusCommand,
    },
    #[error("wrong number of bytes for any primitive")]
    BadLength,
    #[error("read ACK pattern must be ACK..ACK NACK")]
    BadAckPattern,
    #[error("unexpected event after Stop")]
    TrailingEvents,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed frame at event {index}: {kind}")]
pub struct FrameError {
    pub index: usize,
    pub kind: FrameErrorKind,
}

fn err(index: usize, kind: FrameErrorKind) -> FrameError {
    FrameError { index, kind }
}

/// Device-side decode of a frame back into the transaction that produced it.
pub fn parse(frame: &WireFrame) -> Result<Transaction, FrameError> {
    let ev = &frame.events;
    let last = ev.len().saturating_sub(1);
    if ev.is_empty() {
        return Err(err(0, FrameErrorKind::Empty));
    }
    if ev[0] != BusEvent::Start {
        return Err(err(0, FrameErrorKind::MissingStart));
    }
    if ev[last] != BusEvent::Stop {
        return Err(err(last, FrameErrorKind::MissingStop));
    }
    if let Some(pos) = ev[..last].iter().position(|e| *e == BusEvent::Stop) {
        return Err(err(pos + 1, FrameErrorKind::TrailingEvents));
    }

    let write_at = |i: usize| match ev.get(i) {
        Some(BusEvent::Write(b)) if i < last => Ok(*b),
        _ => Err(err(i.min(last), FrameErrorKind::ExpectedWrite)),
    };

    let addr_byte = write_at(1)?;
    if addr_byte & 1 != 0 {
        return Err(err(1, FrameErrorKind::BadDirection));
    }
    let address = addr_byte >> 1;
    let code = write_at(2)?;
    let command =
        PmbusCommand::try_from(code).map_err(|_| err(2, FrameErrorKind::UnknownCommand(code)))?;

    // Split at the repeated start, if any.
    let body = &ev[3..last];
    let (primitive, data) = match body.iter().position(|e| *e == BusEvent::RepeatedStart) {
        None => {
            let mut bytes = Vec::with_capacity(2);
            for i in 3..last {
                bytes.push(write_at(i)?);
            }
            match bytes.as_slice() {
                [] => (Primitive::SendByte, None),
                [b] => (Primitive::WriteByte, Some(*b as u16)),
                [lo, hi] => (Primitive::WriteWord, Some(u16::from_le_bytes([*lo, *hi]))),
                _ => return Err(err(5, FrameErrorKind::BadLength)),
            }
        }
        Some(0) => {
            let rs = 3;
            let raddr = write_at(rs + 1)?;
            if raddr != address_byte(address, true) {
                return Err(err(
                    rs + 1,
                    FrameErrorKind::AddressMismatch {
                        expected: address_byte(address, true),
                        found: raddr,
                    },
                ));
            }
            let reads = &ev[rs + 2..last];
            for (k, e) in reads.iter().enumerate() {
                let idx = rs + 2 + k;
                let BusEvent::Read { ack, .. } = e else {
                    return Err(err(idx, FrameErrorKind::ExpectedRead));
                };
                let want = if k + 1 == reads.len() { Ack::Nack } else { Ack::Ack };
                if *ack != want {
                    return Err(err(idx, FrameErrorKind::BadAckPattern));
                }
            }
            match reads.len() {
                1 => (Primitive::ReadByte, None),
                2 => (Primitive::ReadWord, None),
                _ => return Err(err(last, FrameErrorKind::BadLength)),
            }
        }
        // Data bytes before a repeated start fit no supported primitive.
        Some(k) => return Err(err(3 + k, FrameErrorKind::BadLength)),
    };

    if !command.supports(primitive) {
        return Err(err(2, FrameErrorKind::Unsupported { primitive, command }));
    }
    Transaction::new(primitive, address, command, data)
        .map_err(|_| err(1, FrameErrorKind::BadLength))
}

#[cfg(test)]
mod tests {
    use super::*;
    use BusEvent::*;

    #[test]
    fn write_byte_page() {
        let t = Transaction::write_byte(54, PmbusCommand::Page, 0x01).unwrap();
        assert_eq!(
            frame(&t).events,
            vec![Start, Write(0x6C), Write(0x00), Write(0x01), Stop]
        );
    }

    #[test]
    fn write_word_vout_command() {
        let t = Transaction::write_word(54, PmbusCommand::VoutCommand, 0x0E66).unwrap();
        assert_eq!(
            frame(&t).events,
            vec![Start, Write(0x6C), Write(0x21), Write(0x66), Write(0x0E), Stop]
        );
    }

    #[test]
    fn read_word_vout() {
        let t = Transaction::read_word(53, PmbusCommand::ReadVout).unwrap();
        let f = frame(&t);
        assert_eq!(
            f.events,
            vec![
                Start,
                Write(0x6A),
                Write(0x8B),
                RepeatedStart,
                Write(0x6B),
                Read { value: None, ack: Ack::Ack },
                Read { value: None, ack: Ack::Nack },
                Stop
            ]
        );
        assert_eq!(f.to_string(), "S 6A 8B Sr 6B rd rd P");
        assert_eq!(
            f.with_read_data(&[0x00, 0x10]).to_string(),
            "S 6A 8B Sr 6B r00 r10 P"
        );
    }

    #[test]
    fn byte_counts() {
        let cases = [
            (Transaction::send_byte(52, PmbusCommand::ClearFaults).unwrap(), 2),
            (Transaction::write_byte(52, PmbusCommand::Page, 3).unwrap(), 3),
            (Transaction::write_word(52, PmbusCommand::PowerGoodOn, 9).unwrap(), 4),
            (Transaction::read_byte(52, PmbusCommand::Page).unwrap(), 4),
            (Transaction::read_word(52, PmbusCommand::ReadIout).unwrap(), 5),
        ];
        for (t, n) in cases {
            let f = frame(&t);
            assert_eq!(f.byte_count(), n, "{t}");
            assert_eq!(f.byte_count() as u32, t.primitive().wire_bytes());
            assert_eq!(f.events.first(), Some(&Start));
            assert_eq!(f.events.last(), Some(&Stop));
        }
    }

    #[test]
    fn parse_round_trip_examples() {
        let t = Transaction::write_byte(52, PmbusCommand::Page, 0x03).unwrap();
        assert_eq!(parse(&frame(&t)).unwrap(), t);
        let r = Transaction::read_word(54, PmbusCommand::ReadIout).unwrap();
        let back = parse(&frame(&r)).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.read_len(), 2);
    }

    #[test]
    fn parse_missing_stop() {
        let t = Transaction::write_byte(52, PmbusCommand::Page, 0x03).unwrap();
        let mut f = frame(&t);
        f.events.pop();
        let e = parse(&f).unwrap_err();
        assert_eq!(e.index, f.events.len() - 1);
        assert_eq!(e.kind, FrameErrorKind::MissingStop);
    }

    #[test]
    fn parse_malformed() {
        let bad = |events: Vec<BusEvent>| parse(&WireFrame { events }).unwrap_err();

        assert_eq!(bad(vec![]).kind, FrameErrorKind::Empty);
        assert_eq!(bad(vec![Write(0x68), Stop]).kind, FrameErrorKind::MissingStart);
        let e = bad(vec![Start, Write(0x68), Write(0x20), Stop]);
        assert_eq!((e.index, e.kind), (2, FrameErrorKind::UnknownCommand(0x20)));
        let e = bad(vec![Start, Write(0x69), Write(0x00), Stop]);
        assert_eq!((e.index, e.kind), (1, FrameErrorKind::BadDirection));
        // PAGE as a word write.
        let e = bad(vec![Start, Write(0x68), Write(0x00), Write(1), Write(0), Stop]);
        assert!(matches!(e.kind, FrameErrorKind::Unsupported { .. }));
        let e = bad(vec![
            Start,
            Write(0x68),
            Write(0x8B),
            RepeatedStart,
            Write(0x6B),
            Read { value: None, ack: Ack::Ack },
            Read { value: None, ack: Ack::Nack },
            Stop,
        ]);
        assert_eq!(e.index, 4);
        assert!(matches!(e.kind, FrameErrorKind::AddressMismatch { .. }));
        let e = bad(vec![
            Start,
            Write(0x68),
            Write(0x8B),
            RepeatedStart,
            Write(0x69),
            Read { value: None, ack: Ack::Nack },
            Read { value: None, ack: Ack::Nack },
            Stop,
        ]);
        assert_eq!((e.index, e.kind), (5, FrameErrorKind::BadAckPattern));
        let e = bad(vec![Start, Write(0x68), Write(0x03), Stop, Stop]);
        assert_eq!(e.kind, FrameErrorKind::TrailingEvents);
    }
}
