use memgauge::telemetry::{read_trace, JsonlSink, Output, RunTrace, Split, TelemetryRecord, TraceSink};
use proptest::prelude::*;

fn real() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), 0.0..1.0f64, (0.0..1.0f64).prop_map(|x| x * 1e-200)]
}

fn record(epoch: usize, split: Split, id: usize, loss: f64, score: f64, tokens: bool) -> TelemetryRecord {
    let out = |s: &str| {
        if tokens {
            Output::Tokens(vec![s.into(), "x".into()])
        } else {
            Output::Label(s.into())
        }
    };
    TelemetryRecord {
        run_id: "run".into(),
        noise_rate: 0.25,
        noise_mode: "label_swap".into(),
        epoch,
        split,
        sample_id: format!("s{id:03}"),
        loss: loss * 40.0,
        loc_loss: None,
        rep_loss: None,
        predicted: out("a"),
        score,
        correct: id.is_multiple_of(2),
        target: out("b"),
        var_misuse: None,
    }
}

fn trace_records() -> impl Strategy<Value = Vec<TelemetryRecord>> {
    (1..5usize, 1..8usize, 0..6usize, any::<bool>()).prop_flat_map(|(epochs, ntrain, nheld, tokens)| {
        let n = epochs * (ntrain + nheld);
        prop::collection::vec((real(), real()), n).prop_map(move |vals| {
            let mut out = Vec::new();
            let mut it = vals.into_iter();
            for e in 0..epochs {
                for (split, count) in [(Split::Train, ntrain), (Split::Heldout, nheld)] {
                    for i in 0..count {
                        let (l, s) = it.next().unwrap();
                        out.push(record(e, split, i, l, s, tokens));
                    }
                }
            }
            out
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn file_round_trip_is_exact(records in trace_records()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        {
            let mut sink = JsonlSink::create(&path).unwrap();
            for r in &records {
                sink.append(r).unwrap();
            }
            sink.flush().unwrap();
        }
        let back: Vec<TelemetryRecord> = read_trace(&path).unwrap().records().cloned().collect();
        let mut expected = records.clone();
        expected.sort_by(|a, b| (a.epoch, a.split, &a.sample_id).cmp(&(b.epoch, b.split, &b.sample_id)));
        prop_assert_eq!(back.len(), expected.len());
        for (a, b) in back.iter().zip(&expected) {
            prop_assert_eq!(a, b);
            prop_assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            prop_assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
    }

    #[test]
    fn grouping_is_a_partition(mut records in trace_records(), rot in 0..50usize) {
        let n = records.len();
        records.rotate_left(rot % n);
        let t = RunTrace::from_records(records).unwrap();
        let mut sum = 0;
        for e in 0..t.epoch_count() {
            for split in Split::ALL {
                if t.has_split(split) {
                    sum += t.epoch_slice(e, split).unwrap().len();
                }
            }
        }
        prop_assert_eq!(sum, n);
        prop_assert_eq!(t.total_records(), n);
    }
}

#[test]
fn bad_records_are_refused() {
    let mut r = record(0, Split::Train, 0, 0.1, 1.3, false);
    assert!(r.validate().is_err());
    r.score = 0.5;
    r.loc_loss = Some(0.1);
    r.rep_loss = Some(0.2);
    assert!(r.validate().is_err());
    r.loss = 0.1 + 0.2;
    assert!(r.validate().is_ok());
    let gap = vec![record(0, Split::Train, 0, 0.1, 0.5, false), record(2, Split::Train, 0, 0.1, 0.5, false)];
    assert!(RunTrace::from_records(gap).is_err());
}
