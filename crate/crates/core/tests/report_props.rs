use std::path::PathBuf;

use memgauge::metrics::MetricSeries;
use memgauge::report::{parse_metric_csv, render_csv, render_svg, PlotSeries, PlotStyle};
use proptest::prelude::*;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Set `MEMGAUGE_BLESS=1` to rewrite the frozen files after an intended
/// rendering change.
fn assert_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("MEMGAUGE_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(actual, expected, "{} differs from the frozen rendering", path.display());
}

fn gini_series() -> Vec<MetricSeries> {
    [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&r| MetricSeries {
            run_id: format!("demo-noise{}", r * 100.0),
            noise_rate: r,
            metric: "gini_loss".into(),
            train: (0..6).map(|e| 0.3 + (0.5 - 0.2 * r) * (1.0 - (-0.6 * e as f64).exp())).collect(),
            heldout: (0..6).map(|e| 0.35 + 0.1 * r + 0.02 * e as f64).collect(),
        })
        .collect()
}

#[test]
fn trajectory_svg_is_frozen() {
    let series: Vec<PlotSeries> = gini_series().iter().flat_map(PlotSeries::from_metric).collect();
    let svg = render_svg("gini_loss", &series, PlotStyle::Trajectory).unwrap();
    assert_golden("gini_loss.svg", &svg);
    assert_eq!(svg, render_svg("gini_loss", &series, PlotStyle::Trajectory).unwrap());
}

#[test]
fn curve_svg_is_frozen() {
    let series: Vec<PlotSeries> = [(0.0, 0.9), (1.0, 0.45)]
        .iter()
        .map(|&(r, top)| PlotSeries {
            noise_rate: r,
            split: memgauge::telemetry::Split::Heldout,
            values: (0..20).map(|i| top - 0.01 * i as f64 * (1.0 + r)).collect(),
        })
        .collect();
    let svg = render_svg("scores", &series, PlotStyle::Curve).unwrap();
    assert_golden("scores.svg", &svg);
}

#[test]
fn metric_csv_is_frozen() {
    assert_golden("gini_loss.csv", &render_csv(&gini_series()).unwrap());
}

fn sig9(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 5e-9 * a.abs().max(b.abs())
}

proptest! {
    #[test]
    fn csv_round_trip_keeps_nine_digits(
        rate in prop::sample::select(vec![0.0, 0.25, 0.5, 0.75, 1.0]),
        train in prop::collection::vec(prop_oneof![Just(0.0), 1e-6..1e3f64], 1..10),
        heldout_len in 0..10usize,
    ) {
        let heldout: Vec<f64> = train.iter().take(heldout_len).map(|x| x / 3.0).collect();
        let s = MetricSeries { run_id: "r\"1,x".into(), noise_rate: rate, metric: "f1".into(), train, heldout };
        let back = parse_metric_csv(&render_csv(std::slice::from_ref(&s)).unwrap()).unwrap();
        prop_assert_eq!(back.len(), 1);
        let b = &back[0];
        prop_assert_eq!(&b.run_id, &s.run_id);
        prop_assert_eq!(b.noise_rate, s.noise_rate);
        prop_assert_eq!(b.train.len(), s.train.len());
        prop_assert_eq!(b.heldout.len(), s.heldout.len());
        for (x, y) in b.train.iter().zip(&s.train).chain(b.heldout.iter().zip(&s.heldout)) {
            prop_assert!(sig9(*x, *y), "{x} vs {y}");
        }
    }
}
