use proptest::prelude::*;
use slipnet::events::*;

fn arb_event(width: u16, height: u16) -> impl Strategy<Value = (u64, u16, u16, bool)> {
    (0u64..1_000_000, 0..width, 0..height, any::<bool>())
}

fn arb_trial() -> impl Strategy<Value = Trial> {
    (1u16..700, 1u16..500)
        .prop_flat_map(|(w, h)| {
            (
                Just(w),
                Just(h),
                prop::collection::vec(arb_event(w, h), 0..400),
                prop::option::of(0u64..2_000_000),
                prop::option::of(0u64..2_000_000),
            )
        })
        .prop_map(|(w, h, raw, a, b)| {
            let mut events: Vec<Event> = raw
                .into_iter()
                .map(|(t, x, y, p)| Event::new(t, x, y, if p { 1 } else { -1 }))
                .collect();
            events.sort_by_key(|e| e.t_us);
            let (inc, gross) = match (a, b) {
                (Some(a), Some(b)) => (Some(a.min(b)), Some(a.max(b))),
                other => other,
            };
            Trial {
                stream: EventStream::new(w, h, events),
                incipient_onset_us: inc,
                gross_onset_us: gross,
                scenario: None,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decode_inverts_encode(trial in arb_trial()) {
        let bytes = encode_trial(&trial);
        prop_assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN * trial.stream.len());
        let back = decode_trial(&bytes).unwrap();
        prop_assert_eq!(&back, &trial);
        prop_assert_eq!(encode_trial(&back), bytes);
    }

    #[test]
    fn valid_streams_have_no_violations(trial in arb_trial()) {
        prop_assert!(validate_stream(&trial.stream).is_empty());
    }

    #[test]
    fn first_violation_is_reported(trial in arb_trial(), at in any::<prop::sample::Index>()) {
        prop_assume!(!trial.stream.is_empty());
        let mut s = trial.stream.clone();
        let i = at.index(s.len());
        s.events[i].x = s.width;
        let v = validate_stream(&s);
        prop_assert!(v.contains(&Violation::OutOfBounds(i)));
    }
}

#[test]
fn ten_thousand_events_round_trip_through_files() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut t = 0u64;
    let events: Vec<Event> = (0..10_000)
        .map(|_| {
            t += rng.gen_range(0..50);
            Event::new(
                t,
                rng.gen_range(0..SENSOR_WIDTH),
                rng.gen_range(0..SENSOR_HEIGHT),
                if rng.gen_bool(0.5) { 1 } else { -1 },
            )
        })
        .collect();
    let trial = Trial {
        stream: EventStream::sensor(events),
        incipient_onset_us: Some(1_000),
        gross_onset_us: Some(90_000),
        scenario: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ntev");
    let b = dir.path().join("b.ntev");
    save_events(&trial, &a).unwrap();
    let loaded = load_events(&a).unwrap();
    assert_eq!(loaded, trial);
    save_events(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn scenario_survives_save_and_load() {
    let trial = Trial {
        stream: EventStream::sensor(vec![Event::new(4, 10, 10, 1)]),
        incipient_onset_us: Some(2),
        gross_onset_us: Some(3),
        scenario: Some(slipnet::sim::ScenarioConfig::kinematic(3.0, 1.0, 90.0, 5)),
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.ntev");
    save_events(&trial, &p).unwrap();
    assert!(scenario_sidecar(&p).exists());
    assert_eq!(load_events(&p).unwrap(), trial);
}

#[test]
fn unsorted_and_missing_files() {
    let mut bytes = encode_trial(&Trial::new(EventStream::sensor(vec![
        Event::new(3, 0, 0, 1),
        Event::new(5, 0, 0, 1),
    ])));
    // Swap the two timestamps in place.
    let r0 = HEADER_LEN;
    let r1 = HEADER_LEN + RECORD_LEN;
    bytes[r0] = 5;
    bytes[r1] = 3;
    assert!(matches!(
        decode_trial(&bytes),
        Err(EventsError::UnsortedTimestamps(1))
    ));
    let err = load_events(std::path::Path::new("/nonexistent/x.ntev")).unwrap_err();
    assert!(matches!(err, EventsError::Io { .. }));
}
