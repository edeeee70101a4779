//! Runtime voltage control over PMBus, simulated end to end.
//!
//! Layers, bottom up: [`codec`] (payload encodings and wire framing),
//! [`bus`] (serial transaction engine on a virtual clock), [`regulator`]
//! (multi-rail power controller model), [`manager`] (request opcodes to
//! transaction sequences), [`settling`] (settling-time detection), [`link`]
//! (calibrated transceiver models) and [`harness`] (experiments).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bus;
pub mod codec;
pub mod harness;
pub mod link;
pub mod manager;
pub mod profile;
pub mod regulator;
pub mod settling;

pub use bus::{BusConfig, BusEngine, BusTraceEntry, TransactionResult, TxnStatus};
pub use codec::{PmbusCommand, Primitive, Transaction, WireFrame};
pub use link::{LinkCalibration, LinkSpeed, Side, SweepMode};
pub use manager::{
    ControlPath, ControllerStatus, ExpansionMode, Opcode, Outcome, PowerManager, VolTuneRequest,
};
pub use profile::PlatformProfile;
pub use regulator::{PmbusDevice, Regulator};
pub use settling::{SettlingParams, SettlingReport, VoltageTrace};
