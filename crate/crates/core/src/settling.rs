//! Settling-time detection on sampled voltage traces.
//!
//! The stable average is the mean of the last `N` samples. Samples inside
//! `v_avg · (1 ± x/100)` are stable, and the settling instant `t_s` is the
//! time of the first sample that starts a run of `N` consecutive stable
//! samples. Settling time is `t_s` minus the time of the first sample.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-width of the band used when the stable average is too close to zero
/// for a relative band.
pub const ABSOLUTE_FALLBACK_BAND: f64 = 1e-3;

/// Stable averages with magnitude below this use the absolute band.
pub const NEAR_ZERO_AVERAGE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SettlingError {
    #[error("trace has {len} samples, window needs {window}")]
    TooShort { len: usize, window: usize },
    #[error("window must be >= 1")]
    ZeroWindow,
    #[error("band must be a positive percentage, got {0}")]
    BadBand(f64),
    #[error("sample {index}: time {time} does not follow {prev}")]
    NotIncreasing { index: usize, time: f64, prev: f64 },
    #[error("sample {index} is not finite")]
    NotFinite { index: usize },
    #[error("trace CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(rename = "time_s")]
    pub time: f64,
    #[serde(rename = "voltage_v")]
    pub voltage: f64,
}

/// Time-ordered voltage samples. Times are strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VoltageTrace {
    samples: Vec<Sample>,
}

impl VoltageTrace {
    pub fn new(samples: Vec<Sample>) -> Result<Self, SettlingError> {
        let mut trace = Self::default();
        for s in samples {
            trace.push(s.time, s.voltage)?;
        }
        Ok(trace)
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, SettlingError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(time, voltage)| Sample { time, voltage })
                .collect(),
        )
    }

    pub fn push(&mut self, time: f64, voltage: f64) -> Result<(), SettlingError> {
        let index = self.samples.len();
        if !time.is_finite() || !voltage.is_finite() {
            return Err(SettlingError::NotFinite { index });
        }
        if let Some(prev) = self.samples.last() {
            if time <= prev.time {
                return Err(SettlingError::NotIncreasing {
                    index,
                    time,
                    prev: prev.time,
                });
            }
        }
        self.samples.push(Sample { time, voltage });
        Ok(())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.voltage).collect()
    }

    /// Shift all times so the first sample is at zero.
    pub fn rebased(&self) -> Self {
        let t0 = self.samples.first().map_or(0.0, |s| s.time);
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    time: s.time - t0,
                    voltage: s.voltage,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettlingParams {
    /// Consecutive samples required, `N`.
    pub window: usize,
    /// Band half-width in percent of the stable average, `x`.
    pub band_percent: f64,
}

impl Default for SettlingParams {
    fn default() -> Self {
        Self {
            window: 5,
            band_percent: 1.0,
        }
    }
}

impl SettlingParams {
    pub fn validate(&self) -> Result<(), SettlingError> {
        if self.window == 0 {
            return Err(SettlingError::ZeroWindow);
        }
        if !(self.band_percent > 0.0 && self.band_percent.is_finite()) {
            return Err(SettlingError::BadBand(self.band_percent));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandKind {
    Relative,
    /// `v_avg` was near zero; the band is ±[`ABSOLUTE_FALLBACK_BAND`].
    AbsoluteFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub kind: BandKind,
}

impl Band {
    pub fn around(v_avg: f64, band_percent: f64) -> Self {
        if v_avg.abs() < NEAR_ZERO_AVERAGE {
            return Band {
                lo: v_avg - ABSOLUTE_FALLBACK_BAND,
                hi: v_avg + ABSOLUTE_FALLBACK_BAND,
                kind: BandKind::AbsoluteFallback,
            };
        }
        let a = v_avg * (1.0 - band_percent / 100.0);
        let b = v_avg * (1.0 + band_percent / 100.0);
        Band {
            lo: a.min(b),
            hi: a.max(b),
            kind: BandKind::Relative,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

pub fn stable_average(trace: &VoltageTrace, window: usize) -> Result<f64, SettlingError> {
    if window == 0 {
        return Err(SettlingError::ZeroWindow);
    }
    let n = trace.len();
    if n < window {
        return Err(SettlingError::TooShort { len: n, window });
    }
    let tail = &trace.samples[n - window..];
    Ok(tail.iter().map(|s| s.voltage).sum::<f64>() / window as f64)
}

/// Index of the first sample that begins `window` consecutive in-band samples.
pub fn first_stable_run(voltages: &[f64], band: &Band, window: usize) -> Option<usize> {
    let mut run = 0usize;
    for (i, v) in voltages.iter().enumerate() {
        if band.contains(*v) {
            run += 1;
            if run >= window {
                return Some(i + 1 - window);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettlingReport {
    pub params: SettlingParams,
    pub stable_average: f64,
    pub band: Band,
    pub start_index: Option<usize>,
    pub t_s: Option<f64>,
    pub settling_time: Option<f64>,
    pub samples: usize,
}

impl SettlingReport {
    pub fn settled(&self) -> bool {
        self.t_s.is_some()
    }
}

impl fmt::Display for SettlingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "absent".to_string(), |x| format!("{x:.9}"));
        writeln!(f, "window_n = {}", self.params.window)?;
        writeln!(f, "band_percent = {}", self.params.band_percent)?;
        writeln!(
            f,
            "band_kind = {}",
            match self.band.kind {
                BandKind::Relative => "relative",
                BandKind::AbsoluteFallback => "absolute_fallback",
            }
        )?;
        writeln!(f, "samples = {}", self.samples)?;
        writeln!(f, "stable_average_v = {:.9}", self.stable_average)?;
        writeln!(f, "band_v = [{:.9}, {:.9}]", self.band.lo, self.band.hi)?;
        writeln!(f, "t_s = {}", opt(self.t_s))?;
        writeln!(f, "settling_time_s = {}", opt(self.settling_time))
    }
}

pub fn settling_time(
    trace: &VoltageTrace,
    params: &SettlingParams,
) -> Result<SettlingReport, SettlingError> {
    params.validate()?;
    let v_avg = stable_average(trace, params.window)?;
    let band = Band::around(v_avg, params.band_percent);
    let start_index = first_stable_run(&trace.voltages(), &band, params.window);
    let t0 = trace.samples[0].time;
    let t_s = start_index.map(|i| trace.samples[i].time);
    Ok(SettlingReport {
        params: *params,
        stable_average: v_avg,
        band,
        start_index,
        t_s,
        settling_time: t_s.map(|t| t - t0),
        samples: trace.len(),
    })
}

pub fn write_trace_csv<W: Write>(out: W, trace: &VoltageTrace) -> Result<(), SettlingError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["time_s", "voltage_v"])?;
    for s in &trace.samples {
        w.write_record([s.time.to_string(), s.voltage.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<VoltageTrace, SettlingError> {
    let mut r = csv::Reader::from_reader(input);
    let samples = r.deserialize().collect::<Result<Vec<Sample>, _>>()?;
    VoltageTrace::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(vs: &[f64], dt: f64) -> VoltageTrace {
        VoltageTrace::from_pairs(vs.iter().enumerate().map(|(i, v)| (i as f64 * dt, *v))).unwrap()
    }

    #[test]
    fn stable_average_examples() {
        let t = trace(&[0.5; 8], 1e-4);
        assert_eq!(stable_average(&t, 5).unwrap(), 0.5);
        let t = trace(&[1.0, 0.7, 0.49, 0.50, 0.51, 0.50, 0.50], 1e-4);
        assert!((stable_average(&t, 5).unwrap() - 0.5).abs() < 1e-12);
        let t = trace(&[0.2, 0.4, 0.6], 1e-4);
        assert!((stable_average(&t, 3).unwrap() - 0.4).abs() < 1e-12);
        assert!(matches!(stable_average(&t, 4), Err(SettlingError::TooShort { .. })));
    }

    #[test]
    fn ideal_step_settles_on_first_target_sample() {
        // 0.2 ms sampling; target reached at sample 10 (2.0 ms).
        let vs: Vec<f64> = (0..30)
            .map(|i| if i < 10 { 1.0 - 0.05 * i as f64 } else { 0.5 })
            .collect();
        let r = settling_time(&trace(&vs, 0.2e-3), &SettlingParams::default()).unwrap();
        assert_eq!(r.start_index, Some(10));
        assert!((r.settling_time.unwrap() - 2.0e-3).abs() < 1e-12);
    }

    #[test]
    fn constant_trace_settles_at_zero() {
        let r = settling_time(&trace(&[0.8; 12], 1e-4), &SettlingParams::default()).unwrap();
        assert_eq!(r.settling_time, Some(0.0));
    }

    #[test]
    fn spike_restarts_run() {
        let mut vs = vec![0.5; 20];
        let spike = vs.len() - 3;
        // Tail mean 0.504 V keeps 0.5 V in band and 0.52 V out of it.
        vs[spike] = 0.52;
        // A late spike does not disturb a run that completed before it.
        let r = settling_time(&trace(&vs, 1e-4), &SettlingParams::default()).unwrap();
        assert_eq!(r.start_index, Some(0));
        let mut vs = vec![0.9, 0.8, 0.5, 0.5, 0.5, 0.5, 0.6, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5];
        let r = settling_time(&trace(&vs, 1e-4), &SettlingParams::default()).unwrap();
        assert_eq!(r.start_index, Some(7));
        vs[6] = 0.5;
        let r = settling_time(&trace(&vs, 1e-4), &SettlingParams::default()).unwrap();
        assert_eq!(r.start_index, Some(2));
    }

    #[test]
    fn never_settling_is_absent() {
        let vs = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let p = SettlingParams {
            window: 3,
            band_percent: 1.0,
        };
        let r = settling_time(&trace(&vs, 1e-4), &p).unwrap();
        assert_eq!(r.t_s, None);
        assert_eq!(r.settling_time, None);
        assert!(r.to_string().contains("t_s = absent"));
    }

    #[test]
    fn zero_average_uses_absolute_band() {
        let vs = [0.1, 0.0005, -0.0004, 0.0, 0.0002, -0.0003];
        let p = SettlingParams {
            window: 5,
            band_percent: 1.0,
        };
        let r = settling_time(&trace(&vs, 1e-4), &p).unwrap();
        assert_eq!(r.band.kind, BandKind::AbsoluteFallback);
        assert_eq!(r.start_index, Some(1));
    }

    #[test]
    fn rejects_bad_traces() {
        assert!(VoltageTrace::from_pairs([(0.0, 1.0), (0.0, 1.0)]).is_err());
        assert!(VoltageTrace::from_pairs([(0.0, f64::NAN)]).is_err());
        let p = SettlingParams {
            window: 0,
            band_percent: 1.0,
        };
        assert!(settling_time(&trace(&[1.0], 1.0), &p).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = trace(&[1.0, 0.75, 0.5], 2e-4);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time_s,voltage_v\n0,1\n"));
        assert_eq!(read_trace_csv(buf.as_slice()).unwrap(), t);
        let mut empty = Vec::new();
        write_trace_csv(&mut empty, &VoltageTrace::default()).unwrap();
        assert_eq!(empty, b"time_s,voltage_v\n");
    }
}
