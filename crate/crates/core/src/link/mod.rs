//! Parametric stand-ins for the transceiver link under test.
//!
//! All numbers live in a calibration file; the shipped one is
//! `kc705-gtx-paper`. Lookups are keyed by link speed, and BER and collapse
//! also by which side of the link has its rail swept.

mod ber;
mod collapse;
mod latency;
mod power;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ber::BerEntry;
pub use collapse::{CollapseEntry, CollapseShape};
pub use latency::{LatencyEntry, LatencyShape};
pub use power::PowerEntry;

const KC705_GTX: &str = include_str!("../../data/kc705-gtx-paper.toml");

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("no {what} calibration for {speed} / {key}")]
    Unknown {
        what: &'static str,
        speed: LinkSpeed,
        key: String,
    },
    #[error("reading calibration {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing calibration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid calibration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum LinkSpeed {
    G2_5,
    G5,
    G7_5,
    G10,
}

impl LinkSpeed {
    pub const ALL: [LinkSpeed; 4] = [LinkSpeed::G10, LinkSpeed::G7_5, LinkSpeed::G5, LinkSpeed::G2_5];

    pub fn gbps(self) -> f64 {
        match self {
            LinkSpeed::G2_5 => 2.5,
            LinkSpeed::G5 => 5.0,
            LinkSpeed::G7_5 => 7.5,
            LinkSpeed::G10 => 10.0,
        }
    }

    /// Transceiver reference clock, MHz. Metadata only.
    pub fn reference_clock_mhz(self) -> f64 {
        match self {
            LinkSpeed::G7_5 => 117.188,
            _ => 125.0,
        }
    }
}

impl TryFrom<f64> for LinkSpeed {
    type Error = String;

    fn try_from(g: f64) -> Result<Self, String> {
        LinkSpeed::ALL
            .into_iter()
            .find(|s| s.gbps() == g)
            .ok_or_else(|| format!("unsupported link speed {g} Gbps"))
    }
}

impl From<LinkSpeed> for f64 {
    fn from(s: LinkSpeed) -> f64 {
        s.gbps()
    }
}

impl FromStr for LinkSpeed {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim().trim_end_matches("gbps").trim_end_matches("Gbps").trim_end_matches('G');
        let g: f64 = t.parse().map_err(|_| format!("bad link speed '{s}'"))?;
        LinkSpeed::try_from(g)
    }
}

impl fmt::Display for LinkSpeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} Gbps", self.gbps())
    }
}

/// Which link side has its rail swept; the other stays at 1.0 V.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepMode {
    #[serde(rename = "both")]
    Both,
    #[serde(rename = "rx-swept")]
    RxSwept,
    #[serde(rename = "tx-swept")]
    TxSwept,
}

impl SweepMode {
    pub const ALL: [SweepMode; 3] = [SweepMode::Both, SweepMode::RxSwept, SweepMode::TxSwept];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepMode::Both => "both",
            SweepMode::RxSwept => "rx-swept",
            SweepMode::TxSwept => "tx-swept",
        }
    }

    pub fn sweeps(self, side: Side) -> bool {
        match self {
            SweepMode::Both => true,
            SweepMode::RxSwept => side == Side::Rx,
            SweepMode::TxSwept => side == Side::Tx,
        }
    }
}

impl FromStr for SweepMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        SweepMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown sweep mode '{s}' (expected both, rx-swept or tx-swept)"))
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Tx,
    Rx,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Tx => "tx",
            Side::Rx => "rx",
        })
    }
}

/// Immutable after load; share freely across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkCalibration {
    pub name: String,
    pub payload_bytes: u64,
    pub ber: Vec<BerEntry>,
    pub collapse_shape: CollapseShape,
    #[serde(default)]
    pub collapse: Vec<CollapseEntry>,
    pub power: Vec<PowerEntry>,
    pub latency_shape: LatencyShape,
    pub latency: Vec<LatencyEntry>,
}

impl LinkCalibration {
    /// The shipped `kc705-gtx-paper` calibration.
    pub fn kc705_gtx() -> Self {
        Self::from_toml_str(KC705_GTX).expect("embedded calibration is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, LinkError> {
        let cal: LinkCalibration = toml::from_str(text)?;
        cal.validate()?;
        Ok(cal)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LinkError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LinkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |m: String| Err(LinkError::Invalid(m));
        if self.payload_bytes == 0 {
            return bad("payload_bytes must be positive".into());
        }
        for (i, e) in self.ber.iter().enumerate() {
            e.validate().map_err(LinkError::Invalid)?;
            if self.ber[..i].iter().any(|o| (o.speed, o.mode) == (e.speed, e.mode)) {
                return bad(format!("duplicate BER entry for {} / {}", e.speed, e.mode));
            }
        }
        for (i, e) in self.power.iter().enumerate() {
            e.validate().map_err(LinkError::Invalid)?;
            if self.power[..i].iter().any(|o| (o.speed, o.side) == (e.speed, e.side)) {
                return bad(format!("duplicate power entry for {} / {}", e.speed, e.side));
            }
        }
        for (i, e) in self.latency.iter().enumerate() {
            if !(e.baseline_s >= 0.0) {
                return bad(format!("negative latency baseline for {}", e.speed));
            }
            if self.latency[..i].iter().any(|o| o.speed == e.speed) {
                return bad(format!("duplicate latency entry for {}", e.speed));
            }
        }
        self.collapse_shape.validate().map_err(LinkError::Invalid)?;
        self.latency_shape.validate().map_err(LinkError::Invalid)?;
        Ok(())
    }

    fn unknown(what: &'static str, speed: LinkSpeed, key: impl fmt::Display) -> LinkError {
        LinkError::Unknown {
            what,
            speed,
            key: key.to_string(),
        }
    }

    pub fn ber_entry(&self, speed: LinkSpeed, mode: SweepMode) -> Result<&BerEntry, LinkError> {
        self.ber
            .iter()
            .find(|e| e.speed == speed && e.mode == mode)
            .ok_or_else(|| Self::unknown("BER", speed, mode))
    }

    pub fn power_entry(&self, speed: LinkSpeed, side: Side) -> Result<&PowerEntry, LinkError> {
        self.power
            .iter()
            .find(|e| e.speed == speed && e.side == side)
            .ok_or_else(|| Self::unknown("power", speed, side))
    }

    pub fn latency_entry(&self, speed: LinkSpeed) -> Result<&LatencyEntry, LinkError> {
        self.latency
            .iter()
            .find(|e| e.speed == speed)
            .ok_or_else(|| Self::unknown("latency", speed, "any"))
    }

    /// Collapse voltage, or `None` when the pair never collapses.
    pub fn collapse_voltage(&self, speed: LinkSpeed, mode: SweepMode) -> Option<f64> {
        self.collapse
            .iter()
            .find(|e| e.speed == speed && e.mode == mode)
            .map(|e| e.collapse_v)
    }

    /// BER at `volts` on the swept rail.
    pub fn ber_at(&self, volts: f64, speed: LinkSpeed, mode: SweepMode) -> Result<f64, LinkError> {
        Ok(self.ber_entry(speed, mode)?.ber_at(volts))
    }

    /// Rail power in watts of `side` when its rail is at `volts`.
    pub fn power_at(&self, volts: f64, speed: LinkSpeed, side: Side) -> Result<f64, LinkError> {
        Ok(self.power_entry(speed, side)?.power_at(volts))
    }

    /// Link latency in seconds. Draws from `rng` only below the excursion
    /// onset.
    pub fn latency_at<R: rand::Rng + ?Sized>(
        &self,
        volts: f64,
        speed: LinkSpeed,
        rng: &mut R,
    ) -> Result<f64, LinkError> {
        Ok(self.latency_entry(speed)?.latency_at(volts, &self.latency_shape, rng))
    }

    /// Bytes delivered out of the payload. Draws from `rng` only below the
    /// collapse voltage.
    pub fn received_bytes<R: rand::Rng + ?Sized>(
        &self,
        volts: f64,
        speed: LinkSpeed,
        mode: SweepMode,
        rng: &mut R,
    ) -> u64 {
        collapse::received_bytes(
            volts,
            self.collapse_voltage(speed, mode),
            &self.collapse_shape,
            self.payload_bytes,
            rng,
        )
    }
}

/// Linear interpolation through points sorted by ascending x; constant
/// beyond the ends.
pub(crate) fn interp(points: &[(f64, f64)], x: f64) -> f64 {
    debug_assert!(!points.is_empty());
    if x <= points[0].0 {
        return points[0].1;
    }
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            if x == x1 {
                return y1;
            }
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    points[points.len() - 1].1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_calibration_loads() {
        let c = LinkCalibration::kc705_gtx();
        assert_eq!(c.name, "kc705-gtx-paper");
        assert_eq!(c.payload_bytes, 10_000_000_000);
    }

    #[test]
    fn speed_parsing() {
        assert_eq!("10".parse::<LinkSpeed>().unwrap(), LinkSpeed::G10);
        assert_eq!("7.5".parse::<LinkSpeed>().unwrap(), LinkSpeed::G7_5);
        assert_eq!("2.5G".parse::<LinkSpeed>().unwrap(), LinkSpeed::G2_5);
        assert!("3".parse::<LinkSpeed>().is_err());
        assert_eq!(LinkSpeed::G7_5.reference_clock_mhz(), 117.188);
    }

    #[test]
    fn unknown_pair_is_an_error() {
        let c = LinkCalibration::kc705_gtx();
        assert!(matches!(
            c.ber_at(0.9, LinkSpeed::G5, SweepMode::TxSwept),
            Err(LinkError::Unknown { .. })
        ));
    }

    #[test]
    fn interp_edges() {
        let p = [(0.0, 0.0), (1.0, 10.0), (2.0, 0.0)];
        assert_eq!(interp(&p, -1.0), 0.0);
        assert_eq!(interp(&p, 0.5), 5.0);
        assert_eq!(interp(&p, 1.0), 10.0);
        assert_eq!(interp(&p, 3.0), 0.0);
    }

    #[test]
    fn rejects_duplicates() {
        let mut c = LinkCalibration::kc705_gtx();
        c.power.push(c.power[0].clone());
        assert!(c.validate().is_err());
    }
}
