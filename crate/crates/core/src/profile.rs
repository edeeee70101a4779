//! Platform profiles: which devices sit on the bus, which rails they carry,
//! and the timing calibration of the controller around them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::BusConfig;
use crate::codec::{EXPONENT_MAX, EXPONENT_MIN};
use crate::manager::{ControlPath, ControlPathProfile, LaneMap, LaneTarget};
use crate::regulator::{DeviceError, DynamicsConfig, RailSpec, Regulator};

const KC705: &str = include_str!("../data/kc705.toml");

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("reading profile {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing profile: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlOverheads {
    /// Seconds charged before each transaction on the fabric path.
    pub hardware_overhead: f64,
    /// Seconds charged before each transaction on the processor path.
    pub software_overhead: f64,
}

impl Default for ControlOverheads {
    fn default() -> Self {
        Self {
            hardware_overhead: 80e-6,
            software_overhead: 560e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusTiming {
    pub start_overhead: u32,
}

impl Default for BusTiming {
    fn default() -> Self {
        Self { start_overhead: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformProfile {
    pub name: String,
    pub linear16_exponent: i8,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub control: ControlOverheads,
    #[serde(default)]
    pub bus: BusTiming,
    pub rails: Vec<RailSpec>,
}

impl PlatformProfile {
    /// The shipped KC705 profile.
    pub fn kc705() -> Self {
        Self::from_toml_str(KC705).expect("embedded kc705 profile is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ProfileError> {
        let profile: PlatformProfile = toml::from_str(text)?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProfileError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |m: String| Err(ProfileError::Invalid(m));
        if !(EXPONENT_MIN..=EXPONENT_MAX).contains(&self.linear16_exponent) {
            return bad(format!("linear16_exponent {} out of range", self.linear16_exponent));
        }
        let d = &self.dynamics;
        if !(d.slew_rate > 0.0 && d.slew_rate.is_finite()) {
            return bad(format!("slew_rate must be positive, got {}", d.slew_rate));
        }
        if !(d.response_delay >= 0.0) || !(d.overshoot_fraction >= 0.0) {
            return bad("response_delay and overshoot_fraction must be >= 0".into());
        }
        let c = &self.control;
        if !(c.hardware_overhead >= 0.0 && c.software_overhead >= 0.0) {
            return bad("control overheads must be >= 0".into());
        }
        if self.rails.is_empty() {
            return bad("profile has no rails".into());
        }
        let mut lanes = BTreeSet::new();
        let mut slots = BTreeSet::new();
        let mut pages: BTreeMap<u8, BTreeSet<u8>> = BTreeMap::new();
        for r in &self.rails {
            if !lanes.insert(r.lane) {
                return bad(format!("lane {} listed twice", r.lane));
            }
            if !slots.insert((r.address, r.page)) {
                return bad(format!("address {} page {} listed twice", r.address, r.page));
            }
            if r.address > 0x7f {
                return bad(format!("{}: address {} is not 7-bit", r.name, r.address));
            }
            if !(r.vout_min <= r.vout_max) {
                return bad(format!("{}: vout_min > vout_max", r.name));
            }
            if !(r.vout_min..=r.vout_max).contains(&r.nominal) {
                return bad(format!("{}: nominal outside clamp limits", r.name));
            }
            if !(r.scale > 0.0) {
                return bad(format!("{}: scale must be positive", r.name));
            }
            pages.entry(r.address).or_default().insert(r.page);
        }
        for (addr, set) in &pages {
            if set.iter().copied().ne(0..set.len() as u8) {
                return bad(format!("device {addr}: pages are not 0..{}", set.len()));
            }
        }
        Ok(())
    }

    /// Distinct device addresses, ascending.
    pub fn addresses(&self) -> Vec<u8> {
        let set: BTreeSet<u8> = self.rails.iter().map(|r| r.address).collect();
        set.into_iter().collect()
    }

    pub fn rail_by_lane(&self, lane: u8) -> Option<&RailSpec> {
        self.rails.iter().find(|r| r.lane == lane)
    }

    pub fn build_devices(&self) -> Result<Vec<Regulator>, ProfileError> {
        self.addresses()
            .into_iter()
            .map(|addr| {
                let mut rails: Vec<RailSpec> =
                    self.rails.iter().filter(|r| r.address == addr).cloned().collect();
                rails.sort_by_key(|r| r.page);
                Ok(Regulator::new(addr, &rails, self.linear16_exponent, self.dynamics)?)
            })
            .collect()
    }

    pub fn lane_map(&self) -> LaneMap {
        LaneMap::new(self.rails.iter().map(|r| {
            (
                r.lane,
                LaneTarget {
                    name: r.name.clone(),
                    address: r.address,
                    page: r.page,
                },
            )
        }))
    }

    pub fn control_path(&self, kind: ControlPath) -> ControlPathProfile {
        let overhead = match kind {
            ControlPath::Hardware => self.control.hardware_overhead,
            ControlPath::Software => self.control.software_overhead,
        };
        ControlPathProfile::new(kind, overhead)
    }

    pub fn bus_config(&self, scl_hz: u32) -> BusConfig {
        BusConfig {
            start_overhead: self.bus.start_overhead,
            ..BusConfig::with_rate(scl_hz)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kc705_rail_table() {
        let p = PlatformProfile::kc705();
        let rows: Vec<(u8, &str, u8, u8)> = p
            .rails
            .iter()
            .map(|r| (r.lane, r.name.as_str(), r.address, r.page))
            .collect();
        assert_eq!(
            rows,
            vec![
                (0, "VCCINT", 52, 0),
                (1, "VCCAUX", 52, 1),
                (2, "VCC3V3", 52, 2),
                (3, "VADF", 52, 3),
                (4, "VCC2V5", 53, 0),
                (5, "VCC1V5", 53, 1),
                (6, "MGTAVCC", 53, 2),
                (7, "MGTAVTT", 53, 3),
                (8, "ACCAUX_IO", 54, 0),
                (9, "VCCBRAM", 54, 1),
                (10, "MGTVCCAUX", 54, 2),
            ]
        );
        let devs = p.build_devices().unwrap();
        let counts: Vec<usize> = devs.iter().map(|d| d.rails().len()).collect();
        assert_eq!(counts, vec![4, 4, 3]);
    }

    #[test]
    fn rejects_duplicate_slot() {
        let mut p = PlatformProfile::kc705();
        p.rails[1].page = 0;
        assert!(matches!(p.validate(), Err(ProfileError::Invalid(_))));
    }

    #[test]
    fn rejects_page_gap() {
        let mut p = PlatformProfile::kc705();
        p.rails[3].page = 5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = KC705.replace("name = \"kc705\"", "name = \"kc705\"\nflavour = 1");
        assert!(matches!(
            PlatformProfile::from_toml_str(&text),
            Err(ProfileError::Parse(_))
        ));
    }
}
