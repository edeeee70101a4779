//! PMBus payload encodings and transaction framing.

mod command;
mod frame;
pub mod golden;
mod linear;
mod transaction;

use thiserror::Error;

pub use command::{PmbusCommand, Primitive};
pub use frame::{frame, parse, Ack, BusEvent, FrameError, FrameErrorKind, WireFrame};
pub use linear::{
    decode_linear11, decode_linear16, encode_linear11, encode_linear16, linear11_fields,
    pack_linear11, Linear16Value, EXPONENT_MAX, EXPONENT_MIN,
};
pub use transaction::Transaction;

/// Default LINEAR16 exponent (VOUT_MODE) of the shipped platform profile.
pub const DEFAULT_LINEAR16_EXPONENT: i8 = -12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("exponent {0} outside the 5-bit range [-16, 15]")]
    ExponentOutOfRange(i8),
    #[error("value is not finite")]
    NotFinite,
    #[error("negative voltage {0} V cannot be LINEAR16-encoded")]
    NegativeVoltage(f64),
    #[error("{volts} V overflows a 16-bit mantissa at exponent {exponent}")]
    Linear16Overflow { volts: f64, exponent: i8 },
    #[error("{0} is outside the LINEAR11 range")]
    Linear11Overflow(f64),
    #[error("unknown PMBus command {0:02X}h")]
    UnknownCommand(u8),
    #[error("address {0:#04x} is not a 7-bit address")]
    AddressOutOfRange(u8),
    #[error("{command} cannot be carried by {primitive}")]
    UnsupportedPrimitive {
        primitive: Primitive,
        command: PmbusCommand,
    },
    #[error("payload {data:?} does not fit {primitive}")]
    PayloadMismatch {
        primitive: Primitive,
        data: Option<u16>,
    },
}
