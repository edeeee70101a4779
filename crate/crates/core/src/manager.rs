//! The request-level controller.
//!
//! A [`VolTuneRequest`] names an opcode, a lane and a value. The manager
//! resolves the lane to a device address and `PAGE`, expands the opcode into
//! an ordered transaction list, and runs that list one transaction at a time
//! on its bus, charging the control path's per-transaction overhead first.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{BusEngine, TxnStatus};
use crate::codec::{encode_linear16, CodecError, PmbusCommand, Transaction};
use crate::regulator::{decode_vout, PmbusDevice, Regulator, ThresholdPolicy};
use crate::settling::VoltageTrace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManagerError {
    #[error("unknown opcode {0:#x}")]
    UnknownOpcode(u8),
    #[error("lane {0} is not mapped")]
    UnknownLane(u8),
    #[error("cannot encode {volts} V for lane {lane}: {source}")]
    Encode {
        lane: u8,
        volts: f64,
        source: CodecError,
    },
    #[error("request script line {line}: {reason}")]
    Script { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Opcode {
    ClearStatus = 0x0,
    SetUnderVoltage = 0x1,
    SetPGoodOn = 0x2,
    SetPGoodOff = 0x3,
    SetVoltage = 0x4,
    GetVoltage = 0x5,
}

impl Opcode {
    pub const ALL: [Opcode; 6] = [
        Opcode::ClearStatus,
        Opcode::SetUnderVoltage,
        Opcode::SetPGoodOn,
        Opcode::SetPGoodOff,
        Opcode::SetVoltage,
        Opcode::GetVoltage,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Opcodes that carry a voltage.
    pub fn takes_value(self) -> bool {
        !matches!(self, Opcode::ClearStatus | Opcode::GetVoltage)
    }
}

impl TryFrom<u8> for Opcode {
    type Error = ManagerError;

    fn try_from(code: u8) -> Result<Self, ManagerError> {
        Opcode::ALL
            .into_iter()
            .find(|o| o.code() == code)
            .ok_or(ManagerError::UnknownOpcode(code))
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolTuneRequest {
    pub opcode: Opcode,
    pub lane: u8,
    /// Volts. Ignored by `ClearStatus` and `GetVoltage`.
    pub value: f64,
}

impl VolTuneRequest {
    pub fn new(opcode: Opcode, lane: u8, value: f64) -> Self {
        Self { opcode, lane, value }
    }
    pub fn clear_status() -> Self {
        Self::new(Opcode::ClearStatus, 0, 0.0)
    }
    pub fn set_voltage(lane: u8, volts: f64) -> Self {
        Self::new(Opcode::SetVoltage, lane, volts)
    }
    pub fn get_voltage(lane: u8) -> Self {
        Self::new(Opcode::GetVoltage, lane, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneTarget {
    pub name: String,
    pub address: u8,
    pub page: u8,
}

/// Lane number to (rail, address, page).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LaneMap {
    lanes: BTreeMap<u8, LaneTarget>,
}

impl LaneMap {
    pub fn new(entries: impl IntoIterator<Item = (u8, LaneTarget)>) -> Self {
        Self {
            lanes: entries.into_iter().collect(),
        }
    }

    pub fn resolve(&self, lane: u8) -> Result<&LaneTarget, ManagerError> {
        self.lanes.get(&lane).ok_or(ManagerError::UnknownLane(lane))
    }

    pub fn lanes(&self) -> impl Iterator<Item = (u8, &LaneTarget)> {
        self.lanes.iter().map(|(l, t)| (*l, t))
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlPath {
    Hardware,
    Software,
}

impl ControlPath {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlPath::Hardware => "hardware",
            ControlPath::Software => "software",
        }
    }
}

impl FromStr for ControlPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "hw" | "hardware" => Ok(ControlPath::Hardware),
            "sw" | "software" => Ok(ControlPath::Software),
            _ => Err(format!("unknown control path '{s}' (expected hardware or software)")),
        }
    }
}

impl fmt::Display for ControlPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Timing overlay of one controller realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlPathProfile {
    pub kind: ControlPath,
    pub per_transaction_overhead: Duration,
}

impl ControlPathProfile {
    /// `overhead_s` is rounded to the nanosecond; negative values panic.
    pub fn new(kind: ControlPath, overhead_s: f64) -> Self {
        assert!(overhead_s >= 0.0, "overhead must be >= 0");
        Self {
            kind,
            per_transaction_overhead: Duration::from_nanos((overhead_s * 1e9).round() as u64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExpansionMode {
    /// Threshold registers are rewritten before every `VOUT_COMMAND`.
    #[default]
    Prototype,
    /// `PAGE` (if needed) and `VOUT_COMMAND` only.
    Minimal,
}

/// Last `PAGE` value written successfully to each device.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageCache {
    pages: BTreeMap<u8, u8>,
}

impl PageCache {
    pub fn get(&self, address: u8) -> Option<u8> {
        self.pages.get(&address).copied()
    }

    pub fn is_current(&self, address: u8, page: u8) -> bool {
        self.get(address) == Some(page)
    }

    pub fn set(&mut self, address: u8, page: u8) {
        self.pages.insert(address, page);
    }

    pub fn invalidate(&mut self, address: u8) {
        self.pages.remove(&address);
    }

    pub fn clear(&mut self) {
        self.pages.clear();
    }
}

/// Pure expansion of a request against a cache snapshot.
pub fn expand(
    request: &VolTuneRequest,
    lanes: &LaneMap,
    cache: &PageCache,
    mode: ExpansionMode,
    exponent: i8,
    policy: &ThresholdPolicy,
) -> Result<Vec<Transaction>, ManagerError> {
    use PmbusCommand::*;
    if request.opcode == Opcode::ClearStatus {
        return Ok(Vec::new());
    }
    let target = lanes.resolve(request.lane)?;
    let addr = target.address;
    let word = |cmd: PmbusCommand, volts: f64| -> Result<Transaction, ManagerError> {
        let raw = encode_linear16(volts, exponent)
            .map_err(|source| ManagerError::Encode {
                lane: request.lane,
                volts,
                source,
            })?
            .raw();
        Ok(Transaction::write_word(addr, cmd, raw).expect("word command on a mapped address"))
    };

    let mut out = Vec::with_capacity(6);
    if !cache.is_current(addr, target.page) {
        out.push(Transaction::write_byte(addr, Page, target.page).expect("mapped address"));
    }
    let v = request.value;
    match request.opcode {
        Opcode::ClearStatus => unreachable!(),
        Opcode::SetUnderVoltage => {
            // The value is the warning level; the fault level keeps the
            // policy's warn/fault proportion below it.
            let fault = v * (1.0 - policy.uv_fault_margin) / (1.0 - policy.uv_warn_margin);
            out.push(word(VoutUvWarnLimit, v)?);
            out.push(word(VoutUvFaultLimit, fault)?);
        }
        Opcode::SetPGoodOn => out.push(word(PowerGoodOn, v)?),
        Opcode::SetPGoodOff => out.push(word(PowerGoodOff, v)?),
        Opcode::SetVoltage => {
            if mode == ExpansionMode::Prototype {
                out.push(word(VoutUvWarnLimit, policy.uv_warn(v))?);
                out.push(word(VoutUvFaultLimit, policy.uv_fault(v))?);
                out.push(word(PowerGoodOn, policy.pgood_on(v))?);
                out.push(word(PowerGoodOff, policy.pgood_off(v))?);
            }
            out.push(word(VoutCommand, v)?);
        }
        Opcode::GetVoltage => {
            out.push(Transaction::read_word(addr, ReadVout).expect("mapped address"));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    Nacked { step: usize },
    DeviceError { step: usize },
}

impl Outcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, Outcome::Completed)
    }

    pub fn step(&self) -> Option<usize> {
        match self {
            Outcome::Completed => None,
            Outcome::Nacked { step } | Outcome::DeviceError { step } => Some(*step),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Completed => "Completed",
            Outcome::Nacked { .. } => "Nacked",
            Outcome::DeviceError { .. } => "DeviceError",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerStatus {
    pub request: VolTuneRequest,
    pub outcome: Outcome,
    /// Decoded `READ_VOUT` for a completed `GetVoltage`.
    pub readback: Option<f64>,
    /// Number of transactions in the expansion.
    pub sequence_len: usize,
    /// Simulated time when the request finished.
    pub finished_at: Duration,
}

/// Samples collected before a readback failed.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialTrace {
    pub trace: VoltageTrace,
    pub status: ControllerStatus,
}

pub struct PowerManager<D = Regulator> {
    bus: BusEngine<D>,
    lanes: LaneMap,
    path: ControlPathProfile,
    mode: ExpansionMode,
    exponent: i8,
    policy: ThresholdPolicy,
    cache: PageCache,
    last: Option<ControllerStatus>,
}

impl<D: PmbusDevice> PowerManager<D> {
    pub fn new(bus: BusEngine<D>, lanes: LaneMap, path: ControlPathProfile, exponent: i8) -> Self {
        Self {
            bus,
            lanes,
            path,
            mode: ExpansionMode::default(),
            exponent,
            policy: ThresholdPolicy::default(),
            cache: PageCache::default(),
            last: None,
        }
    }

    pub fn bus(&self) -> &BusEngine<D> {
        &self.bus
    }

    pub fn bus_mut(&mut self) -> &mut BusEngine<D> {
        &mut self.bus
    }

    pub fn lanes(&self) -> &LaneMap {
        &self.lanes
    }

    pub fn control_path(&self) -> &ControlPathProfile {
        &self.path
    }

    pub fn mode(&self) -> ExpansionMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: ExpansionMode) {
        self.mode = mode;
    }

    pub fn policy(&self) -> &ThresholdPolicy {
        &self.policy
    }

    pub fn page_cache(&self) -> &PageCache {
        &self.cache
    }

    pub fn last_status(&self) -> Option<&ControllerStatus> {
        self.last.as_ref()
    }

    pub fn now(&self) -> Duration {
        self.bus.now()
    }

    pub fn expand(&self, request: &VolTuneRequest) -> Result<Vec<Transaction>, ManagerError> {
        expand(request, &self.lanes, &self.cache, self.mode, self.exponent, &self.policy)
    }

    /// Run one request to completion. Configuration errors (unknown lane,
    /// unencodable value) are returned before anything reaches the bus.
    pub fn submit(&mut self, request: VolTuneRequest) -> Result<ControllerStatus, ManagerError> {
        let seq = self.expand(&request)?;
        if request.opcode == Opcode::ClearStatus {
            // Controller-internal reset: forget status and cached pages.
            self.cache.clear();
            self.last = None;
        }
        let mut outcome = Outcome::Completed;
        let mut readback = None;
        for (step, txn) in seq.iter().enumerate() {
            self.bus.idle(self.path.per_transaction_overhead);
            let res = self.bus.execute(txn);
            let is_page = txn.command() == PmbusCommand::Page;
            match res.status {
                TxnStatus::Acked => {
                    if is_page {
                        self.cache.set(txn.address(), txn.data().unwrap_or(0) as u8);
                    }
                    if txn.command() == PmbusCommand::ReadVout {
                        readback = decode_vout(&res.read_payload, self.exponent);
                    }
                }
                TxnStatus::Nacked | TxnStatus::Error => {
                    if is_page {
                        self.cache.invalidate(txn.address());
                    }
                    outcome = if res.status == TxnStatus::Nacked {
                        Outcome::Nacked { step }
                    } else {
                        Outcome::DeviceError { step }
                    };
                    break;
                }
            }
        }
        let status = ControllerStatus {
            request,
            outcome,
            readback,
            sequence_len: seq.len(),
            finished_at: self.bus.now(),
        };
        self.last = Some(status.clone());
        Ok(status)
    }

    /// Issue `count` back-to-back `GetVoltage` requests. Each sample is
    /// stamped with the end time of its `READ_VOUT`.
    pub fn sample_loop(&mut self, lane: u8, count: usize) -> Result<VoltageTrace, SampleError> {
        self.lanes.resolve(lane)?;
        let mut trace = VoltageTrace::default();
        for _ in 0..count {
            match self.sample(lane)? {
                Ok((t, v)) => trace.push(t, v).expect("simulated time advances per sample"),
                Err(status) => return Err(SampleError::Failed(PartialTrace { trace, status })),
            }
        }
        Ok(trace)
    }

    /// One `GetVoltage`. The inner result is (seconds, volts) or the status
    /// of the failed request.
    pub fn sample(&mut self, lane: u8) -> Result<Result<(f64, f64), ControllerStatus>, ManagerError> {
        let status = self.submit(VolTuneRequest::get_voltage(lane))?;
        Ok(match (status.outcome, status.readback) {
            (Outcome::Completed, Some(v)) => Ok((status.finished_at.as_secs_f64(), v)),
            _ => Err(status),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error(transparent)]
    Request(#[from] ManagerError),
    #[error("readback failed after {} samples: {}", .0.trace.len(), .0.status.outcome.label())]
    Failed(PartialTrace),
}

/// Parse a request script: one `opcode lane [value]` per line, `#` comments.
/// The opcode is decimal or `0x`-prefixed hex.
pub fn parse_script<R: BufRead>(input: R) -> Result<Vec<VolTuneRequest>, ManagerError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let fail = |reason: String| ManagerError::Script {
            line: line_no,
            reason,
        };
        let line = line.map_err(|e| fail(e.to_string()))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        let code = match toks[0].strip_prefix("0x").or_else(|| toks[0].strip_prefix("0X")) {
            Some(hex) => u8::from_str_radix(hex, 16),
            None => toks[0].parse(),
        }
        .map_err(|_| fail(format!("bad opcode '{}'", toks[0])))?;
        let opcode = Opcode::try_from(code).map_err(|e| fail(e.to_string()))?;
        let lane: u8 = toks
            .get(1)
            .ok_or_else(|| fail("missing lane".into()))?
            .parse()
            .map_err(|_| fail(format!("bad lane '{}'", toks[1])))?;
        let value = match toks.get(2) {
            Some(s) => s.parse::<f64>().map_err(|_| fail(format!("bad value '{s}'")))?,
            None if opcode.takes_value() => return Err(fail(format!("opcode {opcode} needs a value"))),
            None => 0.0,
        };
        if toks.len() > 3 {
            return Err(fail("trailing tokens".into()));
        }
        out.push(VolTuneRequest::new(opcode, lane, value));
    }
    Ok(out)
}

pub const STATUS_CSV_HEADER: &str = "index,opcode,lane,value_v,outcome,step,readback_v,time_s";

pub fn write_status_csv<W: Write>(mut out: W, statuses: &[ControllerStatus]) -> std::io::Result<()> {
    writeln!(out, "{STATUS_CSV_HEADER}")?;
    for (i, s) in statuses.iter().enumerate() {
        let step = s.outcome.step().map(|n| n.to_string()).unwrap_or_default();
        let rb = s.readback.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{i},{},{},{},{},{step},{rb},{}",
            s.request.opcode,
            s.request.lane,
            s.request.value,
            s.outcome.label(),
            s.finished_at.as_secs_f64()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::BusConfig;
    use crate::profile::PlatformProfile;

    fn manager(path: ControlPath) -> PowerManager {
        let p = PlatformProfile::kc705();
        let bus = BusEngine::with_devices(BusConfig::FAST, p.build_devices().unwrap());
        PowerManager::new(bus, p.lane_map(), p.control_path(path), p.linear16_exponent)
    }

    #[test]
    fn resolve_lane_examples() {
        let m = PlatformProfile::kc705().lane_map();
        let at = |l| {
            let t = m.resolve(l).unwrap();
            (t.address, t.page)
        };
        assert_eq!(at(9), (54, 1));
        assert_eq!(at(6), (53, 2));
        assert_eq!(at(0), (52, 0));
        assert_eq!(m.resolve(11), Err(ManagerError::UnknownLane(11)));
    }

    #[test]
    fn opcode_table() {
        for o in Opcode::ALL {
            assert_eq!(Opcode::try_from(o.code()).unwrap(), o);
        }
        assert_eq!(Opcode::try_from(6), Err(ManagerError::UnknownOpcode(6)));
    }

    #[test]
    fn clear_status_expands_to_nothing() {
        let m = manager(ControlPath::Hardware);
        assert!(m.expand(&VolTuneRequest::clear_status()).unwrap().is_empty());
    }

    #[test]
    fn set_under_voltage_writes_both_limits() {
        let m = manager(ControlPath::Hardware);
        let seq = m.expand(&VolTuneRequest::new(Opcode::SetUnderVoltage, 0, 0.9)).unwrap();
        let cmds: Vec<u8> = seq.iter().map(|t| t.command().code()).collect();
        assert_eq!(cmds, vec![0x00, 0x43, 0x44]);
        assert_eq!(seq[1].data(), Some(encode_linear16(0.9, -12).unwrap().raw()));
        assert!(seq[2].data() < seq[1].data());
    }

    #[test]
    fn get_voltage_reads_current_output() {
        let mut m = manager(ControlPath::Hardware);
        let s = m.submit(VolTuneRequest::get_voltage(6)).unwrap();
        assert_eq!(s.outcome, Outcome::Completed);
        let out = m.bus().device(53).unwrap().rail(2).unwrap().output_voltage();
        assert!((s.readback.unwrap() - out).abs() <= 2f64.powi(-12));
    }

    #[test]
    fn set_voltage_programs_vccbram() {
        let mut m = manager(ControlPath::Hardware);
        let s = m.submit(VolTuneRequest::set_voltage(9, 0.9)).unwrap();
        assert_eq!((s.outcome, s.sequence_len), (Outcome::Completed, 6));
        let rail = m.bus().device(54).unwrap().rail(1).unwrap();
        assert_eq!(rail.target_voltage(), 3686.0 / 4096.0);
        assert_eq!(m.page_cache().get(54), Some(1));
    }

    #[test]
    fn missing_device_nacks_at_first_step() {
        let mut m = manager(ControlPath::Hardware);
        m.bus_mut().detach(54);
        let s = m.submit(VolTuneRequest::set_voltage(9, 0.9)).unwrap();
        assert_eq!(s.outcome, Outcome::Nacked { step: 0 });
        assert_eq!(m.page_cache().get(54), None);
        assert_eq!(m.bus().trace().len(), 1);
    }

    #[test]
    fn overhead_precedes_each_transaction() {
        let mut m = manager(ControlPath::Software);
        m.submit(VolTuneRequest::get_voltage(6)).unwrap();
        let t = m.bus().trace();
        assert_eq!(t[0].start, Duration::from_micros(560));
        assert_eq!(t[1].start, t[0].end + Duration::from_micros(560));
    }

    #[test]
    fn sample_interval_is_read_plus_overhead() {
        let mut m = manager(ControlPath::Hardware);
        let trace = m.sample_loop(6, 10).unwrap();
        let t = trace.times();
        for w in t[1..].windows(2) {
            assert!((w[1] - w[0] - 200e-6).abs() < 1e-12);
        }
    }

    #[test]
    fn script_parsing() {
        let text = "# warmup\n0x4 9 0.9\n5 6\n0 0\n0x1 0 0.85 # limits\n";
        let reqs = parse_script(text.as_bytes()).unwrap();
        assert_eq!(reqs.len(), 4);
        assert_eq!(reqs[0], VolTuneRequest::set_voltage(9, 0.9));
        assert_eq!(reqs[1], VolTuneRequest::get_voltage(6));
        assert!(matches!(
            parse_script("4 9\n".as_bytes()),
            Err(ManagerError::Script { line: 1, .. })
        ));
        assert!(parse_script("7 1 1.0\n".as_bytes()).is_err());
    }

    #[test]
    fn status_csv() {
        let mut m = manager(ControlPath::Hardware);
        let s = vec![m.submit(VolTuneRequest::set_voltage(9, 0.9)).unwrap()];
        let mut buf = Vec::new();
        write_status_csv(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert!(row.starts_with("0,0x4,9,0.9,Completed,,,"), "{row}");
    }
}
