use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LinkSpeed, SweepMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseShape {
    /// Volts below the collapse point per e-fold of delivered fraction.
    pub decay_v: f64,
    /// Lower end of the uniform draw scaling the delivered fraction.
    pub min_draw: f64,
}

impl CollapseShape {
    pub(super) fn validate(&self) -> Result<(), String> {
        if !(self.decay_v > 0.0) || !(0.0..=1.0).contains(&self.min_draw) {
            return Err("collapse shape: need decay_v > 0 and min_draw in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseEntry {
    #[serde(rename = "speed_gbps")]
    pub speed: LinkSpeed,
    pub mode: SweepMode,
    pub collapse_v: f64,
}

pub(super) fn received_bytes<R: Rng + ?Sized>(
    volts: f64,
    collapse_v: Option<f64>,
    shape: &CollapseShape,
    payload: u64,
    rng: &mut R,
) -> u64 {
    match collapse_v {
        Some(c) if volts < c => {
            let draw = rng.random_range(shape.min_draw..=1.0);
            let frac = (-(c - volts) / shape.decay_v).exp() * draw;
            // `frac` < 1 strictly below the collapse point.
            ((payload as f64 * frac).floor() as u64).min(payload - 1)
        }
        _ => payload,
    }
}
