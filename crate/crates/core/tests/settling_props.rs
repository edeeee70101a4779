use proptest::prelude::*;

use voltune_core::settling::{
    first_stable_run, read_trace_csv, settling_time, stable_average, write_trace_csv, Band,
    BandKind, SettlingParams, VoltageTrace,
};

/// Brute-force reference: tail mean, band, then test every start index.
fn oracle(vs: &[f64], n: usize, x: f64) -> Option<usize> {
    let avg = vs[vs.len() - n..].iter().sum::<f64>() / n as f64;
    let (lo, hi) = if avg.abs() < 1e-6 {
        (avg - 1e-3, avg + 1e-3)
    } else {
        let (a, b) = (avg * (1.0 - x / 100.0), avg * (1.0 + x / 100.0));
        (a.min(b), a.max(b))
    };
    (0..=vs.len() - n).find(|&i| vs[i..i + n].iter().all(|v| (lo..=hi).contains(v)))
}

fn trace_of(vs: &[f64]) -> VoltageTrace {
    VoltageTrace::from_pairs(vs.iter().enumerate().map(|(i, v)| (i as f64 * 2e-4, *v))).unwrap()
}

/// A step toward a target with noise and a few spikes.
fn voltages() -> impl Strategy<Value = Vec<f64>> {
    (
        1usize..=200,
        0.4f64..1.2,
        0.4f64..1.2,
        prop::sample::select(vec![0.0, 0.0005, 0.002, 0.01]),
        any::<u64>(),
    )
        .prop_flat_map(|(len, from, to, noise, _)| {
            (
                Just((len, from, to)),
                0..=len,
                prop::collection::vec(-1.0f64..1.0, len).prop_map(move |u| {
                    u.into_iter().map(|x| x * noise).collect::<Vec<_>>()
                }),
            )
        })
        .prop_map(|((len, from, to), edge, noise)| {
            (0..len)
                .map(|i| {
                    let base = if i < edge {
                        from + (to - from) * i as f64 / edge.max(1) as f64
                    } else {
                        to
                    };
                    base + noise[i]
                })
                .collect()
        })
}

fn case() -> impl Strategy<Value = (Vec<f64>, usize, f64)> {
    voltages().prop_flat_map(|vs| {
        let max_n = vs.len().min(10);
        (Just(vs), 1..=max_n, 0.05f64..5.0)
    })
}

proptest! {
    #[test]
    fn matches_brute_force((vs, n, x) in case()) {
        let p = SettlingParams { window: n, band_percent: x };
        let r = settling_time(&trace_of(&vs), &p).unwrap();
        prop_assert_eq!(r.start_index, oracle(&vs, n, x));
        prop_assert_eq!(r.settling_time, r.start_index.map(|i| i as f64 * 2e-4));
    }

    #[test]
    fn wider_band_never_settles_later((vs, n, x) in case(), k in 1.0f64..4.0) {
        let t = trace_of(&vs);
        let narrow = settling_time(&t, &SettlingParams { window: n, band_percent: x }).unwrap();
        let wide = settling_time(&t, &SettlingParams { window: n, band_percent: x * k }).unwrap();
        if let Some(s) = narrow.start_index {
            prop_assert!(wide.start_index.is_some_and(|w| w <= s));
        }
    }

    #[test]
    fn longer_window_never_settles_earlier((vs, n, x) in case()) {
        let avg = stable_average(&trace_of(&vs), n).unwrap();
        let band = Band::around(avg, x);
        let mut prev = Some(0);
        for w in 1..=vs.len().min(12) {
            let cur = first_stable_run(&vs, &band, w);
            match (prev, cur) {
                (Some(p), Some(c)) => prop_assert!(c >= p),
                (None, Some(_)) => prop_assert!(false, "window {} settled after {} did not", w, w - 1),
                _ => {}
            }
            prev = cur;
        }
    }

    #[test]
    fn overshoot_before_the_run_is_ignored(
        (vs, n, x) in case(),
        pick in any::<prop::sample::Index>(),
        above in any::<bool>(),
        size in 0.001f64..0.2,
    ) {
        let t = trace_of(&vs);
        let p = SettlingParams { window: n, band_percent: x };
        let r = settling_time(&t, &p).unwrap();
        let Some(s) = r.start_index else { return Ok(()) };
        if s == 0 {
            return Ok(());
        }
        let mut spiked = vs.clone();
        let i = pick.index(s);
        spiked[i] = if above { r.band.hi + size } else { r.band.lo - size };
        let r2 = settling_time(&trace_of(&spiked), &p).unwrap();
        prop_assert_eq!(r2.start_index, Some(s));
        prop_assert_eq!(r2.stable_average, r.stable_average);
    }

    #[test]
    fn csv_round_trip(vs in voltages()) {
        let t = trace_of(&vs);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &t).unwrap();
        prop_assert_eq!(read_trace_csv(buf.as_slice()).unwrap(), t);
    }
}

#[test]
fn near_zero_average_uses_absolute_band() {
    let r = settling_time(&trace_of(&[0.01, 0.0005, -0.0005, 0.0, 0.0]), &SettlingParams {
        window: 2,
        band_percent: 1.0,
    })
    .unwrap();
    assert_eq!(r.band.kind, BandKind::AbsoluteFallback);
    assert_eq!(r.start_index, Some(1));
}
