use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::LinkSpeed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyShape {
    pub spike_probability: f64,
    pub spike_mean_s: f64,
}

impl LatencyShape {
    pub(super) fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.spike_probability) || !(self.spike_mean_s > 0.0) {
            return Err("latency shape: need probability in [0, 1] and positive mean".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyEntry {
    #[serde(rename = "speed_gbps")]
    pub speed: LinkSpeed,
    pub baseline_s: f64,
    /// Excursions start below this voltage; `None` means never.
    #[serde(default)]
    pub excursion_v: Option<f64>,
}

impl LatencyEntry {
    pub fn latency_at<R: Rng + ?Sized>(&self, volts: f64, shape: &LatencyShape, rng: &mut R) -> f64 {
        match self.excursion_v {
            Some(onset) if volts < onset => {
                if rng.random::<f64>() < shape.spike_probability {
                    let exp = Exp::new(1.0 / shape.spike_mean_s).expect("validated mean");
                    self.baseline_s + exp.sample(rng)
                } else {
                    self.baseline_s
                }
            }
            _ => self.baseline_s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::LinkCalibration;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn baselines_are_exact_above_onset() {
        let c = LinkCalibration::kc705_gtx();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(c.latency_at(0.95, LinkSpeed::G10, &mut rng).unwrap(), 100e-9);
        assert_eq!(c.latency_at(0.95, LinkSpeed::G2_5, &mut rng).unwrap(), 410e-9);
        assert_eq!(c.latency_at(0.70, LinkSpeed::G2_5, &mut rng).unwrap(), 410e-9);
    }

    #[test]
    fn spikes_are_seeded_and_nonnegative() {
        let c = LinkCalibration::kc705_gtx();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200)
                .map(|_| c.latency_at(0.84, LinkSpeed::G10, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        let a = run(7);
        assert_eq!(a, run(7));
        assert!(a.iter().all(|l| *l >= 100e-9));
        assert!(a.iter().any(|l| *l > 100e-9));
    }
}
