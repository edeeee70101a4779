//! Behavioral model of a multi-rail PMBus power controller (UCD9248-style).
//!
//! Each device multiplexes several rails behind one bus address and selects
//! among them with `PAGE`. A `VOUT_COMMAND` write goes through the device's
//! adjustment path (calibration offset, clamp, scale) before it becomes the
//! rail's target, and the output then ramps toward the target at a finite
//! slew rate after a fixed response delay.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    decode_linear16, encode_linear11, encode_linear16, Linear16Value, PmbusCommand,
};

/// Why a device refused a byte.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("NACK: page {page} out of range (device has {rails} rails)")]
    PageOutOfRange { page: u8, rails: usize },
    #[error("NACK: {0} is read-only")]
    ReadOnly(PmbusCommand),
    #[error("NACK: {0} cannot be read")]
    NotReadable(PmbusCommand),
    #[error("NACK: value rejected: {0}")]
    BadValue(String),
    #[error("protocol error: {command} expects {expected} data bytes, got {got}")]
    Length {
        command: PmbusCommand,
        expected: usize,
        got: usize,
    },
}

impl DeviceError {
    /// Length errors are device faults; everything else is a NACK.
    pub fn is_nack(&self) -> bool {
        !matches!(self, DeviceError::Length { .. })
    }
}

/// A device that can sit on the simulated bus.
pub trait PmbusDevice {
    fn address(&self) -> u8;
    /// Handle a write. `payload` is empty for Send Byte.
    fn handle_write(&mut self, command: PmbusCommand, payload: &[u8]) -> Result<(), DeviceError>;
    fn handle_read(&mut self, command: PmbusCommand, len: usize) -> Result<Vec<u8>, DeviceError>;
    /// Advance internal dynamics by `dt` of simulated time.
    fn advance(&mut self, dt: Duration);
}

/// Output dynamics shared by the rails of a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Volts per second.
    pub slew_rate: f64,
    /// Seconds between a `VOUT_COMMAND` write and the start of the ramp.
    pub response_delay: f64,
    /// Overshoot past the target as a fraction of the step, for stress tests.
    #[serde(default)]
    pub overshoot_fraction: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            slew_rate: 500.0,
            response_delay: 100e-6,
            overshoot_fraction: 0.0,
        }
    }
}

/// Threshold register values relative to a rail's operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdPolicy {
    pub uv_warn_margin: f64,
    pub uv_fault_margin: f64,
    pub pgood_on_margin: f64,
    pub pgood_off_margin: f64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            uv_warn_margin: 0.10,
            uv_fault_margin: 0.15,
            pgood_on_margin: 0.05,
            pgood_off_margin: 0.08,
        }
    }
}

impl ThresholdPolicy {
    pub fn uv_warn(&self, target: f64) -> f64 {
        target * (1.0 - self.uv_warn_margin)
    }
    pub fn uv_fault(&self, target: f64) -> f64 {
        target * (1.0 - self.uv_fault_margin)
    }
    pub fn pgood_on(&self, target: f64) -> f64 {
        target * (1.0 - self.pgood_on_margin)
    }
    pub fn pgood_off(&self, target: f64) -> f64 {
        target * (1.0 - self.pgood_off_margin)
    }
}

/// Static description of one rail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RailSpec {
    pub lane: u8,
    pub name: String,
    pub address: u8,
    pub page: u8,
    pub nominal: f64,
    pub vout_min: f64,
    pub vout_max: f64,
    #[serde(default)]
    pub calibration_offset: f64,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

/// Register file of one rail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RailRegisters {
    pub vout_command: Linear16Value,
    pub uv_warn_limit: Linear16Value,
    pub uv_fault_limit: Linear16Value,
    pub pgood_on: Linear16Value,
    pub pgood_off: Linear16Value,
    pub calibration_offset: f64,
    pub vout_min: f64,
    pub vout_max: f64,
    pub scale: f64,
}

/// The device's VOUT adjustment path: offset, clamp, then scale.
pub fn dac_target(commanded: f64, regs: &RailRegisters) -> f64 {
    (commanded + regs.calibration_offset).clamp(regs.vout_min, regs.vout_max) * regs.scale
}

/// Electrical load on a rail, used for current telemetry.
#[derive(Clone, Default)]
pub enum RailLoad {
    #[default]
    None,
    /// Constant power in watts.
    Constant(f64),
    /// Power in watts as a function of rail voltage.
    Curve(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl RailLoad {
    pub fn power(&self, volts: f64) -> f64 {
        match self {
            RailLoad::None => 0.0,
            RailLoad::Constant(w) => *w,
            RailLoad::Curve(f) => f(volts),
        }
    }
}

impl fmt::Debug for RailLoad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RailLoad::None => f.write_str("None"),
            RailLoad::Constant(w) => write!(f, "Constant({w} W)"),
            RailLoad::Curve(_) => f.write_str("Curve(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultFlags {
    pub uv_warn: bool,
    pub uv_fault: bool,
}

impl FaultFlags {
    pub fn any(&self) -> bool {
        self.uv_warn || self.uv_fault
    }
}

#[derive(Debug, Clone)]
pub struct Rail {
    pub name: String,
    pub registers: RailRegisters,
    output: f64,
    target: f64,
    /// Intermediate overshoot point visited before `target`.
    excursion: Option<f64>,
    delay_remaining: f64,
    pub load: RailLoad,
}

impl Rail {
    fn new(spec: &RailSpec, exponent: i8, policy: &ThresholdPolicy) -> Result<Self, DeviceError> {
        let enc = |v: f64| {
            encode_linear16(v, exponent).map_err(|e| DeviceError::BadValue(e.to_string()))
        };
        let registers = RailRegisters {
            vout_command: enc(spec.nominal)?,
            uv_warn_limit: enc(policy.uv_warn(spec.nominal))?,
            uv_fault_limit: enc(policy.uv_fault(spec.nominal))?,
            pgood_on: enc(policy.pgood_on(spec.nominal))?,
            pgood_off: enc(policy.pgood_off(spec.nominal))?,
            calibration_offset: spec.calibration_offset,
            vout_min: spec.vout_min,
            vout_max: spec.vout_max,
            scale: spec.scale,
        };
        let out = dac_target(registers.vout_command.volts(), &registers);
        Ok(Self {
            name: spec.name.clone(),
            registers,
            output: out,
            target: out,
            excursion: None,
            delay_remaining: 0.0,
            load: RailLoad::None,
        })
    }

    pub fn output_voltage(&self) -> f64 {
        self.output
    }

    pub fn target_voltage(&self) -> f64 {
        self.target
    }

    fn command(&mut self, commanded: f64, dynamics: &DynamicsConfig) {
        let target = dac_target(commanded, &self.registers);
        let step = target - self.output;
        self.excursion = (dynamics.overshoot_fraction > 0.0 && step != 0.0)
            .then_some(target + dynamics.overshoot_fraction * step);
        self.target = target;
        self.delay_remaining = dynamics.response_delay;
    }

    fn advance(&mut self, mut dt: f64, dynamics: &DynamicsConfig) {
        if self.delay_remaining > 0.0 {
            let used = dt.min(self.delay_remaining);
            self.delay_remaining -= used;
            dt -= used;
            if self.delay_remaining > 0.0 {
                return;
            }
        }
        while dt > 0.0 {
            let goal = self.excursion.unwrap_or(self.target);
            let distance = goal - self.output;
            if distance == 0.0 {
                if self.excursion.take().is_some() {
                    continue;
                }
                return;
            }
            let reach = distance.abs() / dynamics.slew_rate;
            // Relative slack absorbs rounding in `distance / slew`.
            if reach <= dt * (1.0 + 1e-12) {
                self.output = goal;
                dt -= reach;
                self.excursion = None;
            } else {
                self.output += distance.signum() * dynamics.slew_rate * dt;
                return;
            }
        }
    }

    /// Seconds until the output reaches its target if nothing else changes.
    pub fn time_to_target(&self, dynamics: &DynamicsConfig) -> f64 {
        let path = match self.excursion {
            Some(x) => (x - self.output).abs() + (self.target - x).abs(),
            None => (self.target - self.output).abs(),
        };
        let ramp = if path == 0.0 { 0.0 } else { path / dynamics.slew_rate };
        self.delay_remaining + ramp
    }
}

/// One multi-rail controller on the bus.
#[derive(Debug, Clone)]
pub struct Regulator {
    address: u8,
    page: u8,
    rails: Vec<Rail>,
    exponent: i8,
    dynamics: DynamicsConfig,
    faults: FaultFlags,
    /// Latch UV faults when a rail drops below its fault limit.
    pub strict: bool,
}

impl Regulator {
    /// Build a device from rail specs ordered by page.
    pub fn new(
        address: u8,
        rails: &[RailSpec],
        exponent: i8,
        dynamics: DynamicsConfig,
    ) -> Result<Self, DeviceError> {
        let policy = ThresholdPolicy::default();
        let rails = rails
            .iter()
            .map(|r| Rail::new(r, exponent, &policy))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            address,
            page: 0,
            rails,
            exponent,
            dynamics,
            faults: FaultFlags::default(),
            strict: false,
        })
    }

    pub fn page(&self) -> u8 {
        self.page
    }

    pub fn rails(&self) -> &[Rail] {
        &self.rails
    }

    pub fn rail(&self, page: u8) -> Option<&Rail> {
        self.rails.get(page as usize)
    }

    pub fn rail_mut(&mut self, page: u8) -> Option<&mut Rail> {
        self.rails.get_mut(page as usize)
    }

    pub fn faults(&self) -> FaultFlags {
        self.faults
    }

    pub fn exponent(&self) -> i8 {
        self.exponent
    }

    pub fn dynamics(&self) -> &DynamicsConfig {
        &self.dynamics
    }

    /// Put a rail at `volts`, settled, without any bus traffic.
    pub fn preset(&mut self, page: u8, volts: f64) -> Result<(), DeviceError> {
        let exponent = self.exponent;
        let rails = self.rails.len();
        let rail = self
            .rails
            .get_mut(page as usize)
            .ok_or(DeviceError::PageOutOfRange { page, rails })?;
        rail.registers.vout_command = encode_linear16(volts, exponent)
            .map_err(|e| DeviceError::BadValue(e.to_string()))?;
        let target = dac_target(rail.registers.vout_command.volts(), &rail.registers);
        rail.output = target;
        rail.target = target;
        rail.excursion = None;
        rail.delay_remaining = 0.0;
        Ok(())
    }

    fn current_rail(&mut self) -> &mut Rail {
        // `page` is only ever set to a valid index.
        &mut self.rails[self.page as usize]
    }

    fn word(command: PmbusCommand, payload: &[u8]) -> Result<u16, DeviceError> {
        match payload {
            [lo, hi] => Ok(u16::from_le_bytes([*lo, *hi])),
            _ => Err(DeviceError::Length {
                command,
                expected: 2,
                got: payload.len(),
            }),
        }
    }

    fn update_faults(&mut self) {
        if !self.strict {
            return;
        }
        for rail in &self.rails {
            let v = rail.output;
            if v < rail.registers.uv_warn_limit.volts() {
                self.faults.uv_warn = true;
            }
            if v < rail.registers.uv_fault_limit.volts() {
                self.faults.uv_fault = true;
            }
        }
    }
}

impl PmbusDevice for Regulator {
    fn address(&self) -> u8 {
        self.address
    }

    fn handle_write(&mut self, command: PmbusCommand, payload: &[u8]) -> Result<(), DeviceError> {
        use PmbusCommand::*;
        let exponent = self.exponent;
        match command {
            Page => {
                let [page] = payload else {
                    return Err(DeviceError::Length {
                        command,
                        expected: 1,
                        got: payload.len(),
                    });
                };
                if *page as usize >= self.rails.len() {
                    return Err(DeviceError::PageOutOfRange {
                        page: *page,
                        rails: self.rails.len(),
                    });
                }
                self.page = *page;
            }
            ClearFaults => {
                if !payload.is_empty() {
                    return Err(DeviceError::Length {
                        command,
                        expected: 0,
                        got: payload.len(),
                    });
                }
                self.faults = FaultFlags::default();
            }
            VoutCommand | VoutUvWarnLimit | VoutUvFaultLimit | PowerGoodOn | PowerGoodOff => {
                let raw = Self::word(command, payload)?;
                let value = Linear16Value::new(raw, exponent)
                    .map_err(|e| DeviceError::BadValue(e.to_string()))?;
                let dynamics = self.dynamics;
                let rail = self.current_rail();
                match command {
                    VoutCommand => {
                        rail.registers.vout_command = value;
                        rail.command(value.volts(), &dynamics);
                    }
                    VoutUvWarnLimit => rail.registers.uv_warn_limit = value,
                    VoutUvFaultLimit => rail.registers.uv_fault_limit = value,
                    PowerGoodOn => rail.registers.pgood_on = value,
                    _ => rail.registers.pgood_off = value,
                }
            }
            ReadVout | ReadIout => return Err(DeviceError::ReadOnly(command)),
        }
        Ok(())
    }

    fn handle_read(&mut self, command: PmbusCommand, len: usize) -> Result<Vec<u8>, DeviceError> {
        use PmbusCommand::*;
        let exponent = self.exponent;
        let expect = |n: usize| {
            if len == n {
                Ok(())
            } else {
                Err(DeviceError::Length {
                    command,
                    expected: n,
                    got: len,
                })
            }
        };
        match command {
            Page => {
                expect(1)?;
                Ok(vec![self.page])
            }
            ClearFaults => Err(DeviceError::NotReadable(command)),
            VoutCommand | VoutUvWarnLimit | VoutUvFaultLimit | PowerGoodOn | PowerGoodOff => {
                expect(2)?;
                let regs = &self.current_rail().registers;
                let value = match command {
                    VoutCommand => regs.vout_command,
                    VoutUvWarnLimit => regs.uv_warn_limit,
                    VoutUvFaultLimit => regs.uv_fault_limit,
                    PowerGoodOn => regs.pgood_on,
                    _ => regs.pgood_off,
                };
                Ok(value.raw().to_le_bytes().to_vec())
            }
            ReadVout => {
                expect(2)?;
                let v = self.current_rail().output.max(0.0);
                let raw = encode_linear16(v, exponent)
                    .map_err(|e| DeviceError::BadValue(e.to_string()))?
                    .raw();
                Ok(raw.to_le_bytes().to_vec())
            }
            ReadIout => {
                expect(2)?;
                let rail = self.current_rail();
                let v = rail.output;
                let amps = if v > 0.0 { rail.load.power(v) / v } else { 0.0 };
                let word =
                    encode_linear11(amps).map_err(|e| DeviceError::BadValue(e.to_string()))?;
                Ok(word.to_le_bytes().to_vec())
            }
        }
    }

    fn advance(&mut self, dt: Duration) {
        let secs = dt.as_secs_f64();
        if secs == 0.0 {
            return;
        }
        let dynamics = self.dynamics;
        for rail in &mut self.rails {
            rail.advance(secs, &dynamics);
        }
        self.update_faults();
    }
}

/// Decode a `READ_VOUT` payload under `exponent`.
pub fn decode_vout(payload: &[u8], exponent: i8) -> Option<f64> {
    match payload {
        [lo, hi] => Some(decode_linear16(u16::from_le_bytes([*lo, *hi]), exponent)),
        _ => None,
    }
}
