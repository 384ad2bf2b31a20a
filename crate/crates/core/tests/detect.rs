use proptest::prelude::*;
use slipnet::detect::*;
use slipnet::snn::{classify, ClassCounts};
use slipnet::SlipState;

fn arb_counts() -> impl Strategy<Value = Vec<ClassCounts>> {
    prop::collection::vec(
        (0u32..40, 0u32..40, 0u32..40).prop_map(|(a, b, c)| ClassCounts([a, b, c])),
        1..120,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn smoothing_matches_naive_mean(counts in arb_counts(), w in 1usize..8) {
        let cfg = SmootherConfig::<f64> { window_len: w, margin: 0.0 };
        let s = smooth(&counts, &cfg).unwrap();
        for k in 0..counts.len() {
            let lo = k.saturating_sub(w - 1);
            for c in 0..3 {
                let total: u32 = counts[lo..=k].iter().map(|x| x.0[c]).sum();
                let mean = total as f64 / (k - lo + 1) as f64;
                prop_assert!((s[k][c] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn raw_decisions_are_strict_argmax(counts in arb_counts()) {
        let r = detect_counts::<f32>(&counts, None, None, &SmootherConfig::raw()).unwrap();
        for (row, c) in r.windows.iter().zip(&counts) {
            let best = classify(c);
            let unique = (0..3).filter(|&j| j != best.index()).all(|j| c.0[best.index()] > c.0[j]);
            let want = if unique { Decision::Decided(best) } else { Decision::Undecided };
            prop_assert_eq!(row.decision, want);
        }
    }

    #[test]
    fn gross_never_precedes_incipient(counts in arb_counts(), w in 1usize..6, m in 0u32..5) {
        let cfg = SmootherConfig::<f32> { window_len: w, margin: m as f32 };
        let r = detect_counts(&counts, Some(0), Some(1_000_000), &cfg).unwrap();
        if let Some(g) = r.detected_gross_us {
            let i = r.detected_incipient_us.expect("gross requires incipient");
            prop_assert!(i < g);
        }
        if let (Some(i), Some(lead)) = (r.detected_incipient_us, r.lead_time_ms()) {
            prop_assert!((lead - (1_000_000.0 - i as f64) / 1000.0).abs() < 1e-9);
        }
        for row in &r.windows {
            prop_assert_eq!(row.t_end_us, (row.index as u64 + 1) * 30_000);
        }
    }

    #[test]
    fn larger_margin_decides_less(counts in arb_counts(), w in 1usize..6, m in 0u32..4) {
        let lo = detect_counts(&counts, None, None, &SmootherConfig::<f64> { window_len: w, margin: m as f64 }).unwrap();
        let hi = detect_counts(&counts, None, None, &SmootherConfig::<f64> { window_len: w, margin: m as f64 + 1.0 }).unwrap();
        for (a, b) in lo.windows.iter().zip(&hi.windows) {
            if let Decision::Decided(s) = b.decision {
                prop_assert_eq!(a.decision, Decision::Decided(s));
            }
        }
    }
}

#[test]
fn report_csv_shape() {
    let counts = vec![
        ClassCounts([9, 0, 0]),
        ClassCounts([0, 9, 0]),
        ClassCounts([0, 9, 0]),
        ClassCounts([0, 0, 9]),
        ClassCounts([0, 0, 9]),
    ];
    let cfg = SmootherConfig::<f32> {
        window_len: 1,
        margin: 2.0,
    };
    let r = detect_counts(&counts, Some(20_000), Some(100_000), &cfg).unwrap();
    assert_eq!(r.detected_incipient_us, Some(60_000));
    assert_eq!(r.detected_gross_us, Some(120_000));
    assert_eq!(r.latency_incipient_ms, Some(40.0));
    assert_eq!(r.latency_gross_ms, Some(20.0));
    assert_eq!(r.lead_time_ms(), Some(40.0));
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(
        lines[0],
        "window_index,t_end_us,raw0,raw1,raw2,smooth0,smooth1,smooth2,decision"
    );
    assert!(lines[2].ends_with(SlipState::Incipient.name()));
}

#[test]
fn latency_summary_over_reports() {
    let cfg = SmootherConfig::<f64>::raw();
    let a = detect_counts(
        &[ClassCounts([0, 5, 0]), ClassCounts([0, 0, 5])],
        Some(0),
        Some(30_000),
        &cfg,
    )
    .unwrap();
    let b = detect_counts(
        &[ClassCounts([0, 5, 0]), ClassCounts([0, 5, 0])],
        Some(0),
        Some(90_000),
        &cfg,
    )
    .unwrap();
    let s = latency_stats(&[a, b]).unwrap();
    assert_eq!(s.n, 2);
    assert_eq!(s.incipient.unwrap().mean, 30.0);
    assert_eq!(s.missing_gross, 1);
    assert_eq!(s.gross.unwrap().n, 1);
    assert_eq!(s.min_lead_ms, Some(0.0));
    assert!(latency_stats::<f64>(&[]).is_err());
}
