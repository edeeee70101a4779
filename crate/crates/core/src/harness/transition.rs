use crate::bus::transaction_duration;
use crate::codec::Primitive;
use crate::manager::{ControlPath, ExpansionMode, VolTuneRequest};
use crate::profile::PlatformProfile;
use crate::settling::{settling_time, SettlingParams, SettlingReport, VoltageTrace};

use super::{build_manager, check_clamp, require_completed, sample_until_settled, HarnessError};

/// Targets of the downward characterization sweep from 1.0 V.
pub const DECREASE_TARGETS: [f64; 5] = [0.9, 0.8, 0.7, 0.6, 0.5];
/// Starting points of the upward sweep to 1.0 V.
pub const INCREASE_SOURCES: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionExperiment {
    pub lane: u8,
    pub from_v: f64,
    pub to_v: f64,
    pub path: ControlPath,
    pub scl_hz: u32,
    pub settling: SettlingParams,
    /// Give up after this much simulated time from the first sample.
    pub horizon_s: f64,
}

impl TransitionExperiment {
    /// VCCBRAM, hardware path, 400 kHz.
    pub fn new(from_v: f64, to_v: f64) -> Self {
        Self {
            lane: 9,
            from_v,
            to_v,
            path: ControlPath::Hardware,
            scl_hz: 400_000,
            settling: SettlingParams::default(),
            horizon_s: 20e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransitionResult {
    /// Readback samples; the first one is taken just before the request and
    /// sits at t = 0.
    pub trace: VoltageTrace,
    pub report: SettlingReport,
    /// Transactions issued by the voltage-set request.
    pub set_sequence_len: usize,
}

impl TransitionResult {
    pub fn settling_time(&self) -> Option<f64> {
        self.report.settling_time
    }
}

/// Step one lane from `from_v` to `to_v` and time the transition.
///
/// The rail starts settled at `from_v`. One readback marks t = 0, the
/// controller state is cleared so the full prototype sequence (including
/// `PAGE`) is issued, and readback continues until the tail of the trace is
/// stable.
pub fn run_transition(
    profile: &PlatformProfile,
    exp: &TransitionExperiment,
) -> Result<TransitionResult, HarnessError> {
    exp.settling.validate()?;
    check_clamp(profile, exp.lane, exp.from_v)?;
    check_clamp(profile, exp.lane, exp.to_v)?;
    let mut m = build_manager(profile, exp.path, exp.scl_hz)?;
    m.set_mode(ExpansionMode::Prototype);
    let target = m.lanes().resolve(exp.lane)?.clone();
    m.bus_mut()
        .device_mut(target.address)
        .expect("profile device is attached")
        .preset(target.page, exp.from_v)
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;

    let mut trace = VoltageTrace::default();
    let (t0, v0) = m.sample(exp.lane)?.map_err(|s| HarnessError::Request {
        opcode: s.request.opcode,
        lane: exp.lane,
        outcome: s.outcome,
    })?;
    trace.push(t0, v0)?;

    require_completed(&m.submit(VolTuneRequest::clear_status())?)?;
    let set = m.submit(VolTuneRequest::set_voltage(exp.lane, exp.to_v))?;
    require_completed(&set)?;

    let trace = sample_until_settled(&mut m, exp.lane, &exp.settling, trace, t0, exp.horizon_s)?;
    let trace = trace.rebased();
    let report = settling_time(&trace, &exp.settling)?;
    Ok(TransitionResult {
        trace,
        report,
        set_sequence_len: set.sequence_len,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalRow {
    pub path: ControlPath,
    pub scl_hz: u32,
    /// Mean spacing of the simulated samples, seconds.
    pub mean_interval_s: f64,
    /// Read Word wire time plus per-transaction overhead, seconds.
    pub model_interval_s: f64,
}

/// Sample interval for {hardware, software} x {400 kHz, 100 kHz}.
pub fn run_interval_matrix(
    profile: &PlatformProfile,
    lane: u8,
    samples: usize,
) -> Result<Vec<IntervalRow>, HarnessError> {
    if samples < 2 {
        return Err(HarnessError::Invalid("need at least two samples".into()));
    }
    let mut rows = Vec::new();
    for path in [ControlPath::Hardware, ControlPath::Software] {
        for scl_hz in [400_000, 100_000] {
            let mut m = build_manager(profile, path, scl_hz)?;
            // Warm the page cache so every measured sample is one Read Word.
            m.sample_loop(lane, 1)?;
            let trace = m.sample_loop(lane, samples)?;
            let t = trace.times();
            let mean = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
            let model = transaction_duration(Primitive::ReadWord, m.bus().config())
                + m.control_path().per_transaction_overhead;
            rows.push(IntervalRow {
                path,
                scl_hz,
                mean_interval_s: mean,
                model_interval_s: model.as_secs_f64(),
            });
        }
    }
    Ok(rows)
}
