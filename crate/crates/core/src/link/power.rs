use serde::{Deserialize, Serialize};

use super::{LinkSpeed, Side};

const V1: f64 = 1.0;
const V2: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerEntry {
    #[serde(rename = "speed_gbps")]
    pub speed: LinkSpeed,
    pub side: Side,
    /// Watts at 1.0 V.
    pub p_1v0: f64,
    /// Watts at 0.8 V.
    pub p_0v8: f64,
    /// Extra (volts, watts) points the curve must pass through.
    #[serde(default)]
    pub anchors: Vec<(f64, f64)>,
}

impl PowerEntry {
    /// Quadratic coefficient `a` of `a·x² + (1−a)·x`.
    fn quad_a(&self) -> f64 {
        let x2 = V2 / V1;
        let r = self.p_0v8 / self.p_1v0;
        (x2 - r) / (x2 - x2 * x2)
    }

    fn base(&self, volts: f64) -> f64 {
        let a = self.quad_a();
        let x = volts / V1;
        self.p_1v0 * (a * x * x + (1.0 - a) * x)
    }

    fn ratio_points(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self
            .anchors
            .iter()
            .map(|(v, p)| (*v, p / self.base(*v)))
            .chain([(V2, 1.0), (V1, 1.0)])
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }

    pub(super) fn validate(&self) -> Result<(), String> {
        let who = format!("power {} / {}", self.speed, self.side);
        if !(self.p_1v0 > 0.0 && self.p_0v8 > 0.0 && self.p_0v8 < self.p_1v0) {
            return Err(format!("{who}: need 0 < p_0v8 < p_1v0"));
        }
        for (v, p) in &self.anchors {
            if !(*v > 0.0 && *p > 0.0) || *v == V1 || *v == V2 {
                return Err(format!("{who}: bad anchor ({v}, {p})"));
            }
        }
        // Strictly increasing over the sweep range, checked on a fine grid.
        let mut prev = self.power_at(0.7);
        for k in 1..=3000 {
            let p = self.power_at(0.7 + k as f64 * 1e-4);
            if !(p > prev) {
                return Err(format!("{who}: power is not increasing near {} V", 0.7 + k as f64 * 1e-4));
            }
            prev = p;
        }
        Ok(())
    }

    pub fn power_at(&self, volts: f64) -> f64 {
        if volts == V1 {
            return self.p_1v0;
        }
        self.base(volts) * super::interp(&self.ratio_points(), volts)
    }
}

#[cfg(test)]
mod tests {
    use super::super::LinkCalibration;
    use super::*;

    #[test]
    fn table_points() {
        let c = LinkCalibration::kc705_gtx();
        let p = |v, s, side| c.power_at(v, s, side).unwrap();
        assert_eq!(p(1.0, LinkSpeed::G10, Side::Tx), 0.20);
        assert!((p(0.8, LinkSpeed::G10, Side::Tx) - 0.13).abs() < 1e-12);
        assert!((p(0.8, LinkSpeed::G5, Side::Rx) - 0.08).abs() < 1e-12);
        assert!((p(0.869, LinkSpeed::G10, Side::Tx) - 0.1432).abs() < 1e-12);
        assert!((p(0.864, LinkSpeed::G10, Side::Tx) - 0.1415).abs() < 1e-12);
        assert!((p(0.7, LinkSpeed::G10, Side::Tx) - 0.08).abs() < 1e-12);
    }

    #[test]
    fn plain_quadratic_without_anchors() {
        let e = PowerEntry {
            speed: LinkSpeed::G5,
            side: Side::Tx,
            p_1v0: 0.14,
            p_0v8: 0.09,
            anchors: vec![],
        };
        // a = (0.8 - 0.09/0.14) / 0.16
        let a = (0.8 - 0.09 / 0.14) / 0.16;
        let v: f64 = 0.9;
        assert!((e.power_at(v) - 0.14 * (a * v * v + (1.0 - a) * v)).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_monotone_anchor() {
        let e = PowerEntry {
            speed: LinkSpeed::G10,
            side: Side::Tx,
            p_1v0: 0.20,
            p_0v8: 0.13,
            anchors: vec![(0.9, 0.12)],
        };
        assert!(e.validate().is_err());
    }
}
