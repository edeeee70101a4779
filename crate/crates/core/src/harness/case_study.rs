use std::io::{Read, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::link::{LinkCalibration, LinkSpeed, Side, SweepMode};
use crate::manager::{ControlPath, ExpansionMode, PowerManager, VolTuneRequest};
use crate::profile::PlatformProfile;
use crate::regulator::RailLoad;
use crate::settling::{stable_average, SettlingParams, VoltageTrace};

use super::{build_manager, check_clamp, require_completed, sample_until_settled, HarnessError};

/// BER levels reported by [`savings_report`] besides the zero-BER boundary.
pub const SAVINGS_THRESHOLDS: [f64; 3] = [1e-9, 1e-7, 1e-6];

pub const POINTS_CSV_HEADER: &str = "voltage_v,ber,received_bytes,latency_s,tx_power_w,rx_power_w";

/// Sweep voltages live on a microvolt grid.
const GRID_PER_VOLT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudySweep {
    #[serde(rename = "speed_gbps")]
    pub speed: LinkSpeed,
    pub mode: SweepMode,
    pub start_v: f64,
    pub stop_v: f64,
    pub step_v: f64,
    pub seed: u64,
    /// Rail swept on each board.
    pub lane: u8,
    pub path: ControlPath,
    pub scl_hz: u32,
    pub settling: SettlingParams,
    /// Per-point settling horizon, seconds.
    pub horizon_s: f64,
}

impl CaseStudySweep {
    /// MGTAVCC from 1.0 V to 0.7 V in 1 mV steps, hardware path at 400 kHz.
    pub fn new(speed: LinkSpeed, mode: SweepMode, seed: u64) -> Self {
        Self {
            speed,
            mode,
            start_v: 1.0,
            stop_v: 0.7,
            step_v: 0.001,
            seed,
            lane: 6,
            path: ControlPath::Hardware,
            scl_hz: 400_000,
            settling: SettlingParams::default(),
            horizon_s: 20e-3,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Invalid(m.to_string()));
        if !(self.step_v > 0.0) {
            return bad("step must be positive");
        }
        if !(0.7..=1.0).contains(&self.start_v) || !(0.7..=1.0).contains(&self.stop_v) {
            return bad("sweep range must lie within [0.7, 1.0] V");
        }
        if self.stop_v > self.start_v {
            return bad("sweep runs downward: stop must not exceed start");
        }
        let step_units = self.step_v * GRID_PER_VOLT;
        if (step_units - step_units.round()).abs() > 1e-6 {
            return bad("step must be a whole number of microvolts");
        }
        self.settling.validate()?;
        Ok(())
    }

    /// Operating points from `start_v` down to `stop_v` inclusive.
    pub fn voltages(&self) -> Vec<f64> {
        let start = (self.start_v * GRID_PER_VOLT).round() as i64;
        let stop = (self.stop_v * GRID_PER_VOLT).round() as i64;
        let step = (self.step_v * GRID_PER_VOLT).round() as i64;
        (0..)
            .map(|k| start - k * step)
            .take_while(|u| *u >= stop)
            .map(|u| u as f64 / GRID_PER_VOLT)
            .collect()
    }

    fn snap(&self, volts: f64) -> f64 {
        let step = (self.step_v * GRID_PER_VOLT).round();
        let stop = (self.stop_v * GRID_PER_VOLT).round();
        let k = ((volts * GRID_PER_VOLT - stop) / step).round();
        (stop + k * step) / GRID_PER_VOLT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(rename = "voltage_v")]
    pub voltage: f64,
    pub ber: f64,
    pub received_bytes: u64,
    #[serde(rename = "latency_s")]
    pub latency: f64,
    #[serde(rename = "tx_power_w")]
    pub tx_power: f64,
    #[serde(rename = "rx_power_w")]
    pub rx_power: f64,
}

/// Run description echoed next to the CSV output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMetadata {
    pub sweep: CaseStudySweep,
    pub profile: String,
    pub calibration: String,
    pub payload_bytes: u64,
    pub reference_clock_mhz: f64,
    pub initial_expansion: &'static str,
    pub point_expansion: &'static str,
    pub point_voltage: &'static str,
    pub uv_warn_margin: f64,
    pub uv_fault_margin: f64,
    pub pgood_on_margin: f64,
    pub pgood_off_margin: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudyResult {
    pub points: Vec<SweepPoint>,
    pub metadata: SweepMetadata,
}

struct Board {
    manager: PowerManager,
    side: Side,
    swept: bool,
    volts: f64,
}

fn set_and_settle(
    board: &mut Board,
    sweep: &CaseStudySweep,
    volts: f64,
) -> Result<f64, HarnessError> {
    let m = &mut board.manager;
    require_completed(&m.submit(VolTuneRequest::set_voltage(sweep.lane, volts))?)?;
    let t0 = m.now().as_secs_f64();
    let trace = sample_until_settled(
        m,
        sweep.lane,
        &sweep.settling,
        VoltageTrace::default(),
        t0,
        sweep.horizon_s,
    )?;
    // The transaction log is not kept across points.
    m.bus_mut().take_trace();
    Ok(stable_average(&trace, sweep.settling.window)?)
}

/// Sweep the link's rail voltage and record one [`SweepPoint`] per step.
///
/// A TX board and an RX board each get their own controller stack. Swept
/// boards are first programmed to `start_v` with the full prototype
/// sequence; every later point uses the minimal expansion. After each step
/// the rail is read back until stable, and the link models are evaluated at
/// the settled readback snapped to the sweep grid.
pub fn run_case_study(
    profile: &PlatformProfile,
    cal: &LinkCalibration,
    sweep: &CaseStudySweep,
) -> Result<CaseStudyResult, HarnessError> {
    sweep.validate()?;
    let voltages = sweep.voltages();
    for v in &voltages {
        check_clamp(profile, sweep.lane, *v)?;
    }
    cal.ber_entry(sweep.speed, sweep.mode)?;
    let tx_power = cal.power_entry(sweep.speed, Side::Tx)?.clone();
    let rx_power = cal.power_entry(sweep.speed, Side::Rx)?.clone();
    cal.latency_entry(sweep.speed)?;

    let rail = profile
        .rail_by_lane(sweep.lane)
        .ok_or(crate::manager::ManagerError::UnknownLane(sweep.lane))?;
    let fixed_v = rail.nominal;
    let mut boards = Vec::with_capacity(2);
    for (side, entry) in [(Side::Tx, tx_power), (Side::Rx, rx_power)] {
        let mut manager = build_manager(profile, sweep.path, sweep.scl_hz)?;
        let target = manager.lanes().resolve(sweep.lane)?.clone();
        let device = manager
            .bus_mut()
            .device_mut(target.address)
            .expect("profile device is attached");
        device.rail_mut(target.page).expect("mapped page").load =
            RailLoad::Curve(Arc::new(move |v| entry.power_at(v)));
        manager.set_mode(ExpansionMode::Prototype);
        boards.push(Board {
            manager,
            side,
            swept: sweep.mode.sweeps(side),
            volts: fixed_v,
        });
    }
    for b in boards.iter_mut().filter(|b| b.swept) {
        let settled = set_and_settle(b, sweep, sweep.start_v)?;
        b.volts = sweep.snap(settled);
        b.manager.set_mode(ExpansionMode::Minimal);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(sweep.seed);
    let mut points = Vec::with_capacity(voltages.len());
    for v in &voltages {
        for b in boards.iter_mut().filter(|b| b.swept) {
            let settled = set_and_settle(b, sweep, *v)?;
            b.volts = sweep.snap(settled);
        }
        let swept = boards.iter().find(|b| b.swept).expect("a side is swept").volts;
        let volts_of = |side| boards.iter().find(|b| b.side == side).unwrap().volts;
        let (v_tx, v_rx) = (volts_of(Side::Tx), volts_of(Side::Rx));
        points.push(SweepPoint {
            voltage: swept,
            ber: cal.ber_at(swept, sweep.speed, sweep.mode)?,
            received_bytes: cal.received_bytes(swept, sweep.speed, sweep.mode, &mut rng),
            latency: cal.latency_at(swept, sweep.speed, &mut rng)?,
            tx_power: cal.power_at(v_tx, sweep.speed, Side::Tx)?,
            rx_power: cal.power_at(v_rx, sweep.speed, Side::Rx)?,
        });
    }

    let policy = *boards[0].manager.policy();
    let metadata = SweepMetadata {
        sweep: *sweep,
        profile: profile.name.clone(),
        calibration: cal.name.clone(),
        payload_bytes: cal.payload_bytes,
        reference_clock_mhz: sweep.speed.reference_clock_mhz(),
        initial_expansion: "prototype",
        point_expansion: "minimal",
        point_voltage: "settled readback snapped to the sweep grid",
        uv_warn_margin: policy.uv_warn_margin,
        uv_fault_margin: policy.uv_fault_margin,
        pgood_on_margin: policy.pgood_on_margin,
        pgood_off_margin: policy.pgood_off_margin,
        points: points.len(),
    };
    Ok(CaseStudyResult { points, metadata })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdSaving {
    pub ber_threshold: f64,
    pub voltage: f64,
    pub power_w: f64,
    pub percent_saved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SavingsReport {
    pub side: Side,
    pub baseline_voltage: f64,
    pub baseline_power_w: f64,
    /// Lowest point of the zero-BER run that starts at the baseline.
    pub boundary: ThresholdSaving,
    /// One entry per [`SAVINGS_THRESHOLDS`] value.
    pub thresholds: Vec<ThresholdSaving>,
}

/// Relative slack when comparing a BER against a threshold it was
/// calibrated to hit exactly.
const THRESHOLD_SLACK: f64 = 1e-9;

/// Power saved on the swept side down to each BER level.
///
/// `points` must be sorted by descending voltage and start at
/// `baseline_voltage`. For each level the operating point is the lowest
/// voltage of the contiguous run, from the baseline down, whose BER stays
/// at or below that level.
pub fn savings_report(
    points: &[SweepPoint],
    mode: SweepMode,
    baseline_voltage: f64,
) -> Result<SavingsReport, HarnessError> {
    let first = points.first().ok_or(HarnessError::EmptySweep)?;
    if points.windows(2).any(|w| !(w[1].voltage < w[0].voltage)) {
        return Err(HarnessError::Invalid("points must be sorted by descending voltage".into()));
    }
    if (first.voltage - baseline_voltage).abs() > 1e-9 {
        return Err(HarnessError::Invalid(format!(
            "first point {} V is not the {baseline_voltage} V baseline",
            first.voltage
        )));
    }
    let side = match mode {
        SweepMode::RxSwept => Side::Rx,
        SweepMode::Both | SweepMode::TxSwept => Side::Tx,
    };
    let power = |p: &SweepPoint| match side {
        Side::Tx => p.tx_power,
        Side::Rx => p.rx_power,
    };
    let base = power(first);
    let at_level = |level: f64| {
        let limit = level * (1.0 + THRESHOLD_SLACK);
        let last = points
            .iter()
            .take_while(|p| p.ber <= limit)
            .last()
            .unwrap_or(first);
        ThresholdSaving {
            ber_threshold: level,
            voltage: last.voltage,
            power_w: power(last),
            percent_saved: 100.0 * (1.0 - power(last) / base),
        }
    };
    Ok(SavingsReport {
        side,
        baseline_voltage,
        baseline_power_w: base,
        boundary: at_level(0.0),
        thresholds: SAVINGS_THRESHOLDS.iter().map(|t| at_level(*t)).collect(),
    })
}

pub fn write_points_csv<W: Write>(out: W, points: &[SweepPoint]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(POINTS_CSV_HEADER.split(','))?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv<R: Read>(input: R) -> Result<Vec<SweepPoint>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}
