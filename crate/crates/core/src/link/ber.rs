use serde::{Deserialize, Serialize};

use super::{LinkSpeed, SweepMode};

/// BER never exceeds that of random bits.
pub const BER_CEILING: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BerEntry {
    #[serde(rename = "speed_gbps")]
    pub speed: LinkSpeed,
    pub mode: SweepMode,
    /// BER is exactly zero at and above this voltage.
    pub onset_v: f64,
    /// (volts, log10 BER), strictly decreasing in volts.
    pub anchors: Vec<(f64, f64)>,
}

impl BerEntry {
    pub(super) fn validate(&self) -> Result<(), String> {
        let who = format!("BER {} / {}", self.speed, self.mode);
        if self.anchors.is_empty() {
            return Err(format!("{who}: no anchors"));
        }
        if self.anchors[0].0 >= self.onset_v {
            return Err(format!("{who}: first anchor must lie below onset_v"));
        }
        for w in self.anchors.windows(2) {
            if !(w[1].0 < w[0].0) {
                return Err(format!("{who}: anchor voltages must strictly decrease"));
            }
            if w[1].1 < w[0].1 {
                return Err(format!("{who}: BER must not fall as voltage drops"));
            }
        }
        if self.anchors.iter().any(|a| !a.1.is_finite()) {
            return Err(format!("{who}: anchors must be finite"));
        }
        Ok(())
    }

    pub fn ber_at(&self, volts: f64) -> f64 {
        if volts >= self.onset_v {
            return 0.0;
        }
        // `interp` wants ascending x.
        let mut pts = self.anchors.clone();
        pts.reverse();
        let log = super::interp(&pts, volts);
        10f64.powf(log).min(BER_CEILING)
    }
}

#[cfg(test)]
mod tests {
    use super::super::LinkCalibration;
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs()
    }

    #[test]
    fn ten_gig_examples() {
        let c = LinkCalibration::kc705_gtx();
        let b = |v| c.ber_at(v, LinkSpeed::G10, SweepMode::Both).unwrap();
        assert_eq!(b(0.90), 0.0);
        assert_eq!(b(0.869), 0.0);
        assert!(close(b(0.868), 1e-9));
        assert!(close(b(0.866), 1e-7));
        assert!(close(b(0.864), 1e-6));
        assert!(b(0.7) <= BER_CEILING);
    }

    #[test]
    fn tx_swept_onset_is_lower() {
        let c = LinkCalibration::kc705_gtx();
        let b = |v| c.ber_at(v, LinkSpeed::G10, SweepMode::TxSwept).unwrap();
        assert_eq!(b(0.90), 0.0);
        assert_eq!(b(0.82), 0.0);
        assert!(b(0.819) > 0.0);
    }

    #[test]
    fn holds_first_anchor_just_below_onset() {
        let e = BerEntry {
            speed: LinkSpeed::G10,
            mode: SweepMode::Both,
            onset_v: 0.87,
            anchors: vec![(0.86, -9.0), (0.85, -3.0)],
        };
        assert!(close(e.ber_at(0.865), 1e-9));
        assert!(close(e.ber_at(0.855), 1e-6));
        assert!(close(e.ber_at(0.5), 1e-3));
        assert!(e.validate().is_ok());
    }
}
