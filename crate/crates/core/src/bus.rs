//! Serial execution of transactions on a simulated two-wire bus.
//!
//! Time is virtual. Every transaction occupies the bus for
//! `(wire_bytes × 9 + control_events × start_overhead)` SCL periods, attached
//! devices are advanced by that span, and the transaction takes effect at its
//! end time.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Duration;

use crate::codec::{frame, parse, Primitive, Transaction};
use crate::regulator::{DeviceError, PmbusDevice, Regulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusConfig {
    pub scl_hz: u32,
    /// SCL periods charged per Start, RepeatedStart and Stop.
    pub start_overhead: u32,
}

impl BusConfig {
    pub const STANDARD: BusConfig = BusConfig {
        scl_hz: 100_000,
        start_overhead: 1,
    };
    pub const FAST: BusConfig = BusConfig {
        scl_hz: 400_000,
        start_overhead: 1,
    };

    pub fn with_rate(scl_hz: u32) -> Self {
        assert!(scl_hz > 0, "SCL rate must be positive");
        BusConfig {
            scl_hz,
            start_overhead: 1,
        }
    }

    pub fn clocks(&self, primitive: Primitive) -> u64 {
        primitive.wire_bytes() as u64 * 9
            + primitive.control_events() as u64 * self.start_overhead as u64
    }
}

impl Default for BusConfig {
    fn default() -> Self {
        Self::FAST
    }
}

/// Wire time of one transaction, rounded to the nanosecond.
pub fn transaction_duration(primitive: Primitive, config: &BusConfig) -> Duration {
    let clocks = config.clocks(primitive) as u128;
    let hz = config.scl_hz as u128;
    let nanos = (clocks * 1_000_000_000 + hz / 2) / hz;
    Duration::from_nanos(nanos as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TxnStatus {
    Acked,
    Nacked,
    Error,
}

impl TxnStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TxnStatus::Acked => "Acked",
            TxnStatus::Nacked => "Nacked",
            TxnStatus::Error => "Error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransactionResult {
    pub status: TxnStatus,
    pub read_payload: Vec<u8>,
    pub duration: Duration,
    pub device_error: Option<DeviceError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusTraceEntry {
    pub start: Duration,
    pub end: Duration,
    pub transaction: Transaction,
    pub status: TxnStatus,
    /// Written payload, or the data returned by a read.
    pub data: Vec<u8>,
}

/// One bus master with its attached devices.
///
/// Methods take `&mut self`, so at most one transaction is ever in flight.
#[derive(Debug, Clone)]
pub struct BusEngine<D = Regulator> {
    config: BusConfig,
    devices: BTreeMap<u8, D>,
    now: Duration,
    trace: Vec<BusTraceEntry>,
}

impl<D: PmbusDevice> BusEngine<D> {
    pub fn new(config: BusConfig) -> Self {
        Self {
            config,
            devices: BTreeMap::new(),
            now: Duration::ZERO,
            trace: Vec::new(),
        }
    }

    pub fn with_devices(config: BusConfig, devices: impl IntoIterator<Item = D>) -> Self {
        let mut bus = Self::new(config);
        for d in devices {
            bus.attach(d);
        }
        bus
    }

    /// Attach a device, returning any device previously at that address.
    pub fn attach(&mut self, device: D) -> Option<D> {
        self.devices.insert(device.address(), device)
    }

    pub fn detach(&mut self, address: u8) -> Option<D> {
        self.devices.remove(&address)
    }

    pub fn device(&self, address: u8) -> Option<&D> {
        self.devices.get(&address)
    }

    pub fn device_mut(&mut self, address: u8) -> Option<&mut D> {
        self.devices.get_mut(&address)
    }

    pub fn config(&self) -> &BusConfig {
        &self.config
    }

    pub fn now(&self) -> Duration {
        self.now
    }

    pub fn trace(&self) -> &[BusTraceEntry] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<BusTraceEntry> {
        std::mem::take(&mut self.trace)
    }

    /// Let simulated time pass with the bus idle.
    pub fn idle(&mut self, dt: Duration) {
        if dt.is_zero() {
            return;
        }
        for d in self.devices.values_mut() {
            d.advance(dt);
        }
        self.now += dt;
    }

    pub fn execute(&mut self, txn: &Transaction) -> TransactionResult {
        let start = self.now;
        let duration = transaction_duration(txn.primitive(), &self.config);
        self.idle(duration);

        // The device decodes what it sees on the wire.
        let decoded = parse(&frame(txn)).expect("framing a valid transaction always parses");

        let (status, read_payload, device_error) = match self.devices.get_mut(&decoded.address()) {
            None => (TxnStatus::Nacked, Vec::new(), None),
            Some(dev) => {
                let outcome = if decoded.primitive().is_read() {
                    dev.handle_read(decoded.command(), decoded.read_len())
                } else {
                    dev.handle_write(decoded.command(), &decoded.payload())
                        .map(|()| Vec::new())
                };
                match outcome {
                    Ok(data) => (TxnStatus::Acked, data, None),
                    Err(e) if e.is_nack() => (TxnStatus::Nacked, Vec::new(), Some(e)),
                    Err(e) => (TxnStatus::Error, Vec::new(), Some(e)),
                }
            }
        };

        let data = if txn.primitive().is_read() {
            read_payload.clone()
        } else {
            txn.payload()
        };
        self.trace.push(BusTraceEntry {
            start,
            end: self.now,
            transaction: *txn,
            status,
            data,
        });
        TransactionResult {
            status,
            read_payload,
            duration,
            device_error,
        }
    }
}

pub const TRACE_CSV_HEADER: &str = "start_s,end_s,primitive,addr,cmd,payload_hex,status";

/// Write a bus trace as `start_s,end_s,primitive,addr,cmd,payload_hex,status`.
pub fn write_trace_csv<W: Write>(mut out: W, trace: &[BusTraceEntry]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for e in trace {
        let payload: String = e.data.iter().map(|b| format!("{b:02X}")).collect();
        writeln!(
            out,
            "{},{},{},{},{:02X},{},{}",
            e.start.as_secs_f64(),
            e.end.as_secs_f64(),
            e.transaction.primitive().mnemonic(),
            e.transaction.address(),
            e.transaction.command().code(),
            payload,
            e.status.as_str()
        )?;
    }
    Ok(())
}
