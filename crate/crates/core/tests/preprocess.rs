mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use slipnet::events::{Event, EventStream, Trial};
use slipnet::preprocess::*;
use slipnet::SlipState;

use common::{naive_retained, naive_volume, random_sensor_stream, rng};

#[test]
fn conservation_against_naive_recount() {
    let mut r = rng(21);
    for case in 0..100 {
        let stream = random_sensor_stream(&mut r, 2_000, 100_000);
        let cropped = crop_and_filter(&stream).unwrap();
        assert_eq!(cropped.len(), naive_retained(&stream), "case {case}");
        let pooled = pool_events(&cropped).unwrap();
        assert_eq!(pooled.len(), cropped.len());
        for t0 in [0, 17_000, 70_000] {
            let vol = bin_window(&pooled, t0);
            assert_eq!(
                vol.to_dense(),
                naive_volume(&stream, t0),
                "case {case} t0 {t0}"
            );
            let in_window = cropped
                .events
                .iter()
                .filter(|e| e.t_us >= t0 && e.t_us < t0 + WINDOW_US)
                .count() as u64;
            assert_eq!(vol.total(), in_window);
        }
    }
}

#[test]
fn boundary_events() {
    let t0 = 50_000;
    let ev = |t, x, y| Event::new(t, x, y, 1);
    let stream = EventStream::sensor(vec![
        ev(t0 - 1, 300, 200),
        ev(t0, 119, 200),
        ev(t0, 120, 200),
        ev(t0 + 999, 519, 439),
        ev(t0 + 1_000, 520, 200),
        ev(t0 + 29_999, 300, 40),
        ev(t0 + 30_000, 300, 200),
    ]);
    let vol = bin_window(&pooled_stream(&stream).unwrap(), t0);
    assert_eq!(vol.total(), 3);
    assert_eq!(vol.get(0, 0, 8, 0), 1);
    assert_eq!(vol.get(0, 0, 19, 19), 1);
    assert_eq!(vol.get(29, 0, 0, 9), 1);
}

fn trial_with_onsets(inc: u64, gross: u64, end: u64) -> Trial {
    let mut t = Trial::new(EventStream::sensor(vec![Event::new(end, 300, 200, 1)]));
    t.incipient_onset_us = Some(inc);
    t.gross_onset_us = Some(gross);
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn windows_never_straddle_onsets(
        inc in 0u64..3_000_000,
        len in 0u64..4_000_000,
        tail in 0u64..2_000_000,
        seed in any::<u64>(),
    ) {
        let gross = inc + len;
        let trial = trial_with_onsets(inc, gross, gross + tail);
        let w = sample_windows(&trial, seed).unwrap();
        prop_assert!(w.no_slip.len() <= 50 && w.incipient.len() <= 50 && w.gross.len() <= 50);
        prop_assert_eq!(w.incipient.len() as u64, (len / WINDOW_US).min(50));
        prop_assert_eq!(w.no_slip.len() as u64, (inc / WINDOW_US).min(50));
        let mut starts = HashSet::new();
        for (label, t) in w.iter() {
            let end = t + WINDOW_US;
            match label {
                SlipState::NoSlip => prop_assert!(end <= inc),
                SlipState::Incipient => prop_assert!(t >= inc && end <= gross),
                SlipState::Gross => prop_assert!(t >= gross && end <= trial.end_us()),
            }
            prop_assert!(starts.insert(t));
        }
        let mut all: Vec<u64> = w.iter().map(|(_, t)| t).collect();
        all.sort_unstable();
        for p in all.windows(2) {
            prop_assert!(p[1] - p[0] >= WINDOW_US);
        }
        if let Some(&last) = w.no_slip.last() {
            prop_assert_eq!(last + WINDOW_US, inc);
        }
        if let Some(&first) = w.gross.first() {
            prop_assert_eq!(first, gross);
        }
    }

    #[test]
    fn partition_is_disjoint_and_complete(n in 3usize..2_000, seed in any::<u64>()) {
        let p = partition_trials(n, SplitRatios::default(), seed, false).unwrap();
        prop_assert_eq!(p.train.len(), n * 70 / 100);
        prop_assert_eq!(p.validation.len(), n * 15 / 100);
        let mut all: Vec<usize> = p.train.iter().chain(&p.validation).chain(&p.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(p.clone(), partition_trials(n, SplitRatios::default(), seed, false).unwrap());
    }

    #[test]
    fn pooling_keeps_per_cell_order(
        raw in prop::collection::vec((0u64..10_000, 0u16..400, 0u16..400), 0..500)
    ) {
        let mut events: Vec<Event> = raw.into_iter().map(|(t, x, y)| Event::new(t, x, y, 1)).collect();
        events.sort_by_key(|e| e.t_us);
        let s = EventStream::new(400, 400, events.clone());
        let pooled = pool_events(&s).unwrap();
        prop_assert_eq!(pooled.len(), events.len());
        for cell_x in [0u16, 7, 19] {
            for cell_y in [0u16, 11, 19] {
                let want: Vec<u64> = events
                    .iter()
                    .filter(|e| e.x / 20 == cell_x && e.y / 20 == cell_y)
                    .map(|e| e.t_us)
                    .collect();
                let got: Vec<u64> = pooled
                    .events
                    .iter()
                    .filter(|e| e.x == cell_x && e.y == cell_y)
                    .map(|e| e.t_us)
                    .collect();
                prop_assert_eq!(got, want);
            }
        }
    }
}

#[test]
fn split_is_trial_disjoint() {
    let trials: Vec<Trial> = (0..20)
        .map(|i| trial_with_onsets(600_000 + i * 30_000, 1_500_000, 3_000_000))
        .collect();
    let d = split_trials(&trials, SplitRatios::default(), 5).unwrap();
    let ids = |s: &[LabeledSample]| s.iter().map(|x| x.trial_id).collect::<HashSet<_>>();
    let (a, b, c) = (ids(&d.train), ids(&d.validation), ids(&d.test));
    assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    assert_eq!((a.len(), b.len(), c.len()), (14, 3, 3));
    let again = split_trials(&trials, SplitRatios::default(), 5).unwrap();
    assert_eq!(again.train, d.train);
    assert_eq!(
        partition_trials(864, SplitRatios::default(), 1, true)
            .map(|p| (p.train.len(), p.validation.len(), p.test.len()))
            .unwrap(),
        (604, 129, 131)
    );
}
