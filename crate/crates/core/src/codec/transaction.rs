use std::fmt;

use super::{CodecError, PmbusCommand, Primitive};

/// One atomic PMBus bus operation.
///
/// Construction validates the address range and that the command can be
/// carried by the primitive, so every `Transaction` value can be framed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transaction {
    primitive: Primitive,
    address: u8,
    command: PmbusCommand,
    data: Option<u16>,
}

impl Transaction {
    /// Generic constructor. `data` must be present exactly for the write
    /// primitives that carry data, and fit in a byte for `WriteByte`.
    pub fn new(
        primitive: Primitive,
        address: u8,
        command: PmbusCommand,
        data: Option<u16>,
    ) -> Result<Self, CodecError> {
        if address > 0x7f {
            return Err(CodecError::AddressOutOfRange(address));
        }
        if !command.supports(primitive) {
            return Err(CodecError::UnsupportedPrimitive { primitive, command });
        }
        let data_ok = match (primitive, data) {
            (Primitive::WriteByte, Some(d)) => d <= 0xff,
            (Primitive::WriteWord, Some(_)) => true,
            (Primitive::SendByte | Primitive::ReadByte | Primitive::ReadWord, None) => true,
            _ => false,
        };
        if !data_ok {
            return Err(CodecError::PayloadMismatch { primitive, data });
        }
        Ok(Self {
            primitive,
            address,
            command,
            data,
        })
    }

    pub fn send_byte(address: u8, command: PmbusCommand) -> Result<Self, CodecError> {
        Self::new(Primitive::SendByte, address, command, None)
    }

    pub fn write_byte(address: u8, command: PmbusCommand, value: u8) -> Result<Self, CodecError> {
        Self::new(Primitive::WriteByte, address, command, Some(value as u16))
    }

    pub fn write_word(address: u8, command: PmbusCommand, value: u16) -> Result<Self, CodecError> {
        Self::new(Primitive::WriteWord, address, command, Some(value))
    }

    pub fn read_byte(address: u8, command: PmbusCommand) -> Result<Self, CodecError> {
        Self::new(Primitive::ReadByte, address, command, None)
    }

    pub fn read_word(address: u8, command: PmbusCommand) -> Result<Self, CodecError> {
        Self::new(Primitive::ReadWord, address, command, None)
    }

    pub fn primitive(&self) -> Primitive {
        self.primitive
    }

    pub fn address(&self) -> u8 {
        self.address
    }

    pub fn command(&self) -> PmbusCommand {
        self.command
    }

    /// Written value for WriteByte/WriteWord.
    pub fn data(&self) -> Option<u16> {
        self.data
    }

    /// Number of bytes a read returns; zero for writes.
    pub fn read_len(&self) -> usize {
        if self.primitive.is_read() {
            self.primitive.data_len()
        } else {
            0
        }
    }

    /// Written payload in wire order (words low byte first).
    pub fn payload(&self) -> Vec<u8> {
        match (self.primitive, self.data) {
            (Primitive::WriteByte, Some(d)) => vec![d as u8],
            (Primitive::WriteWord, Some(d)) => d.to_le_bytes().to_vec(),
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for Transaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [Addr={}][{}]", self.primitive, self.address, self.command)?;
        match (self.primitive, self.data) {
            (Primitive::WriteByte, Some(d)) => write!(f, "[{d:02X}h]"),
            (Primitive::WriteWord, Some(d)) => write!(f, "[{d:04X}h]"),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            Transaction::write_word(54, PmbusCommand::Page, 1),
            Err(CodecError::UnsupportedPrimitive { .. })
        ));
        assert!(matches!(
            Transaction::read_word(0x80, PmbusCommand::ReadVout),
            Err(CodecError::AddressOutOfRange(0x80))
        ));
        assert!(matches!(
            Transaction::new(Primitive::WriteByte, 52, PmbusCommand::Page, Some(0x100)),
            Err(CodecError::PayloadMismatch { .. })
        ));
        assert!(matches!(
            Transaction::new(Primitive::ReadWord, 52, PmbusCommand::ReadVout, Some(1)),
            Err(CodecError::PayloadMismatch { .. })
        ));
    }

    #[test]
    fn word_payload_is_little_endian() {
        let t = Transaction::write_word(54, PmbusCommand::VoutCommand, 0x0E66).unwrap();
        assert_eq!(t.payload(), vec![0x66, 0x0E]);
        assert_eq!(t.read_len(), 0);
        let r = Transaction::read_word(53, PmbusCommand::ReadVout).unwrap();
        assert_eq!(r.read_len(), 2);
    }
}
