//! Experiment runners built on the controller stack.
//!
//! Each run builds its own profile devices, bus and manager, so runs share
//! no mutable state and can execute on separate threads.

mod case_study;
mod transition;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bus::BusEngine;
use crate::link::LinkError;
use crate::manager::{ControlPath, ManagerError, Outcome, PowerManager, SampleError};
use crate::profile::{PlatformProfile, ProfileError};
use crate::settling::{stable_average, Band, SettlingError, SettlingParams, VoltageTrace};

pub use case_study::{
    read_points_csv, run_case_study, savings_report, write_points_csv, CaseStudyResult,
    CaseStudySweep, SavingsReport, SweepMetadata, SweepPoint, ThresholdSaving, POINTS_CSV_HEADER,
    SAVINGS_THRESHOLDS,
};
pub use transition::{
    run_interval_matrix, run_transition, IntervalRow, TransitionExperiment, TransitionResult,
    DECREASE_TARGETS, INCREASE_SOURCES,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Manager(#[from] ManagerError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Settling(#[from] SettlingError),
    #[error("request {opcode} on lane {lane} ended {outcome:?}")]
    Request {
        opcode: crate::manager::Opcode,
        lane: u8,
        outcome: Outcome,
    },
    #[error("lane {lane} did not settle within {horizon_s} s ({samples} samples)")]
    Timeout {
        lane: u8,
        horizon_s: f64,
        samples: usize,
        trace: VoltageTrace,
    },
    #[error("{volts} V is outside lane {lane} clamp limits [{min}, {max}]")]
    Clamp {
        lane: u8,
        volts: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("sweep has no points")]
    EmptySweep,
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("CSV {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// A fresh controller stack for `profile` at the given path and clock.
pub fn build_manager(
    profile: &PlatformProfile,
    path: ControlPath,
    scl_hz: u32,
) -> Result<PowerManager, HarnessError> {
    let bus = BusEngine::with_devices(profile.bus_config(scl_hz), profile.build_devices()?);
    Ok(PowerManager::new(
        bus,
        profile.lane_map(),
        profile.control_path(path),
        profile.linear16_exponent,
    ))
}

pub(crate) fn check_clamp(profile: &PlatformProfile, lane: u8, volts: f64) -> Result<(), HarnessError> {
    let rail = profile
        .rail_by_lane(lane)
        .ok_or(ManagerError::UnknownLane(lane))?;
    if !(rail.vout_min..=rail.vout_max).contains(&volts) {
        return Err(HarnessError::Clamp {
            lane,
            volts,
            min: rail.vout_min,
            max: rail.vout_max,
        });
    }
    Ok(())
}

/// True when the last `2N` samples all sit inside the band around the mean
/// of the last `N`.
pub fn tail_is_settled(trace: &VoltageTrace, params: &SettlingParams) -> bool {
    let n = params.window;
    if trace.len() < 2 * n {
        return false;
    }
    let Ok(avg) = stable_average(trace, n) else {
        return false;
    };
    let band = Band::around(avg, params.band_percent);
    trace.samples()[trace.len() - 2 * n..]
        .iter()
        .all(|s| band.contains(s.voltage))
}

/// Sample `lane` into `trace` until its tail settles or `horizon_s` of
/// simulated time has passed since `t0`.
pub(crate) fn sample_until_settled(
    manager: &mut PowerManager,
    lane: u8,
    params: &SettlingParams,
    mut trace: VoltageTrace,
    t0: f64,
    horizon_s: f64,
) -> Result<VoltageTrace, HarnessError> {
    while !tail_is_settled(&trace, params) {
        if manager.now().as_secs_f64() - t0 > horizon_s {
            return Err(HarnessError::Timeout {
                lane,
                horizon_s,
                samples: trace.len(),
                trace,
            });
        }
        let (t, v) = manager.sample(lane)?.map_err(|status| HarnessError::Request {
            opcode: status.request.opcode,
            lane,
            outcome: status.outcome,
        })?;
        trace.push(t, v)?;
    }
    Ok(trace)
}

pub(crate) fn require_completed(
    status: &crate::manager::ControllerStatus,
) -> Result<(), HarnessError> {
    if status.outcome.is_completed() {
        Ok(())
    } else {
        Err(HarnessError::Request {
            opcode: status.request.opcode,
            lane: status.request.lane,
            outcome: status.outcome,
        })
    }
}

/// Create `path` and hand a buffered writer to `f`.
pub fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    f(&mut w).map_err(io)?;
    w.flush().map_err(io)
}

/// Write a voltage trace as `time_s,voltage_v`.
pub fn emit_trace_csv(path: &Path, trace: &VoltageTrace) -> Result<(), HarnessError> {
    write_file(path, |w| {
        crate::settling::write_trace_csv(w, trace).map_err(|e| match e {
            SettlingError::Csv(c) => std::io::Error::other(c),
            other => std::io::Error::other(other.to_string()),
        })
    })
}
