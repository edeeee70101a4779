use std::sync::OnceLock;

use proptest::prelude::*;

use voltune_core::harness::{
    run_case_study, savings_report, write_points_csv, CaseStudySweep, SweepPoint,
};
use voltune_core::link::{LinkCalibration, LinkSpeed, SweepMode};
use voltune_core::PlatformProfile;

fn cal() -> &'static LinkCalibration {
    static CAL: OnceLock<LinkCalibration> = OnceLock::new();
    CAL.get_or_init(LinkCalibration::kc705_gtx)
}

fn sweep(speed: LinkSpeed, mode: SweepMode, seed: u64) -> Vec<SweepPoint> {
    run_case_study(&PlatformProfile::kc705(), cal(), &CaseStudySweep::new(speed, mode, seed))
        .unwrap()
        .points
}

fn csv_bytes(points: &[SweepPoint]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_points_csv(&mut buf, points).unwrap();
    buf
}

fn shipped_pairs() -> Vec<(LinkSpeed, SweepMode)> {
    cal().ber.iter().map(|e| (e.speed, e.mode)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn same_seed_same_bytes(pair in prop::sample::select(shipped_pairs()), seed in any::<u64>()) {
        let a = csv_bytes(&sweep(pair.0, pair.1, seed));
        let b = csv_bytes(&sweep(pair.0, pair.1, seed));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn savings_grow_with_tolerated_ber(pair in prop::sample::select(shipped_pairs()), seed in any::<u64>()) {
        let pts = sweep(pair.0, pair.1, seed);
        let s = savings_report(&pts, pair.1, 1.0).unwrap();
        let mut prev = s.boundary.percent_saved;
        prop_assert!(prev >= 0.0);
        for t in &s.thresholds {
            prop_assert!(t.percent_saved >= prev, "{:?}", s);
            prev = t.percent_saved;
        }
    }

    #[test]
    fn unswept_side_power_is_constant(pair in prop::sample::select(shipped_pairs()), seed in any::<u64>()) {
        let pts = sweep(pair.0, pair.1, seed);
        let const_tx = pts.iter().all(|p| p.tx_power == pts[0].tx_power);
        let const_rx = pts.iter().all(|p| p.rx_power == pts[0].rx_power);
        match pair.1 {
            SweepMode::TxSwept => prop_assert!(const_rx && !const_tx),
            SweepMode::RxSwept => prop_assert!(const_tx && !const_rx),
            SweepMode::Both => prop_assert!(!const_tx && !const_rx),
        }
    }
}

#[test]
fn collapse_sits_below_ber_onset_at_10g() {
    let pts = sweep(LinkSpeed::G10, SweepMode::Both, 7);
    let payload = cal().payload_bytes;
    let onset = pts.iter().find(|p| p.ber > 0.0).unwrap().voltage;
    let collapse = pts.iter().find(|p| p.received_bytes < payload).unwrap().voltage;
    assert!(collapse < onset, "collapse {collapse} V, onset {onset} V");
    // Regimes in order: clean, errors with full payload, then collapse.
    assert!(pts.iter().filter(|p| p.voltage > onset).all(|p| p.ber == 0.0));
    assert!(pts
        .iter()
        .filter(|p| p.voltage < onset && p.voltage >= collapse + 0.001)
        .all(|p| p.ber > 0.0 && p.received_bytes == payload));
}

#[test]
fn different_seeds_change_only_stochastic_columns() {
    let a = sweep(LinkSpeed::G10, SweepMode::Both, 1);
    let b = sweep(LinkSpeed::G10, SweepMode::Both, 2);
    assert_ne!(csv_bytes(&a), csv_bytes(&b));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.voltage, x.ber, x.tx_power, x.rx_power), (y.voltage, y.ber, y.tx_power, y.rx_power));
    }
}
