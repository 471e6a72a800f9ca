use aiperf::harness::{EventKind, LogEvent, RunLog};
use aiperf::score::{compute_score_series, emit_report, regulated_score, score_csv, summary_text, INVALID_MARKER};
use proptest::prelude::*;

#[test]
fn regulated_score_at_the_error_limit() {
    // -ln(0.3) to 20 digits: 1.2039728043259359926.
    let r = regulated_score(0.30, 1.0).unwrap();
    assert!((r - 1.203_972_804_325_936).abs() < 1e-15);
}

fn event(ts: f64, replica: u32, kind: EventKind, error: Option<f64>, ops: u128) -> LogEvent {
    LogEvent { ts_seconds: ts, replica_id: replica, trial_digest: "t".into(), event: kind, epoch_index: 1, error, epoch_ops: ops, wall_seconds: 1.0 }
}

fn ten_point_log() -> RunLog {
    let events = (1..=10).map(|k| event(k as f64 * 360.0 - 5.0, 0, EventKind::Epoch, Some(0.5 - 0.03 * k as f64), 1_000_000)).collect();
    RunLog { header: vec!["seed=1".into()], events }
}

#[test]
fn report_files() {
    let log = ten_point_log();
    let series = compute_score_series(&log).unwrap();
    assert!(series.valid());
    let dir = tempfile::tempdir().unwrap();
    emit_report(&series, &log, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("score.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert_eq!(csv.lines().next().unwrap(), "t_seconds,cumulative_ops,ops_per_second,min_error,regulated_score");
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    for key in ["final_score_ops_per_second=", "regulated_score=", "valid=true", "trials=", "best_error=0.2"] {
        assert!(summary.contains(key), "{key}");
    }
    assert!(!summary.contains(INVALID_MARKER));
    let svg = std::fs::read_to_string(dir.path().join("score.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<polyline").count() == 2);
    assert_eq!(score_csv(&compute_score_series(&ten_point_log()).unwrap()), csv);
}

#[test]
fn invalid_runs_are_flagged() {
    let log = RunLog { header: vec![], events: vec![event(100.0, 0, EventKind::Epoch, Some(0.31), 5)] };
    let series = compute_score_series(&log).unwrap();
    assert!(!series.valid());
    let text = summary_text(&series, &log);
    assert!(text.contains("valid=false"));
    assert!(text.contains(INVALID_MARKER));
}

#[test]
fn only_epoch_events_carry_ops() {
    let log = RunLog {
        header: vec![],
        events: vec![
            event(0.0, 0, EventKind::Proposed, None, 99),
            event(10.0, 0, EventKind::Epoch, Some(0.4), 7),
            event(10.0, 0, EventKind::Stopped, Some(0.4), 99),
            event(10.0, 0, EventKind::Recorded, Some(0.4), 99),
        ],
    };
    let s = compute_score_series(&log).unwrap();
    assert_eq!(s.points.len(), 1);
    assert_eq!(s.points[0].cumulative_ops, 7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn regulated_score_ordering_and_linearity(a in 1e-6f64..0.999_999, b in 1e-6f64..0.999_999, ops in 0.0f64..1e18, k in 0.0f64..100.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-9);
        if ops > 0.0 {
            prop_assert!(regulated_score(lo, ops).unwrap() > regulated_score(hi, ops).unwrap());
        }
        let base = regulated_score(a, ops).unwrap();
        let scaled = regulated_score(a, ops * k).unwrap();
        prop_assert!((scaled - k * base).abs() <= 1e-12 * scaled.abs().max(1.0));
    }

    #[test]
    fn derivative_grows_as_error_falls(lo in 0.01f64..0.5, gap in 0.01f64..0.45, ops in 1.0f64..1e15) {
        let hi = lo + gap;
        let h = 1e-7;
        let slope = |e: f64| ((regulated_score(e + h, ops).unwrap() - regulated_score(e - h, ops).unwrap()) / (2.0 * h)).abs();
        prop_assert!(slope(lo) > slope(hi));
        prop_assert!((slope(lo) - ops / lo).abs() / (ops / lo) < 1e-5);
    }

    #[test]
    fn series_is_monotone(
        epochs in prop::collection::vec((0.0f64..20_000.0, 0u32..4, 1u128..1_000_000_000_000, 0.01f64..0.99), 0..60),
    ) {
        let mut events: Vec<LogEvent> = epochs.iter().map(|&(t, r, ops, e)| event(t, r, EventKind::Epoch, Some(e), ops)).collect();
        events.sort_by(|a, b| a.ts_seconds.total_cmp(&b.ts_seconds));
        let total: u128 = events.iter().map(|e| e.epoch_ops).sum();
        let s = compute_score_series(&RunLog { header: vec![], events }).unwrap();
        for w in s.points.windows(2) {
            prop_assert!(w[1].cumulative_ops >= w[0].cumulative_ops);
            prop_assert!(w[1].min_error <= w[0].min_error);
            prop_assert_eq!(w[1].t_seconds - w[0].t_seconds, 360.0);
        }
        for p in &s.points {
            prop_assert_eq!(p.ops_per_second, p.cumulative_ops as f64 / p.t_seconds);
            prop_assert_eq!(p.t_seconds % 360.0, 0.0);
        }
        if let Some(last) = s.points.last() {
            prop_assert_eq!(last.cumulative_ops, total);
        }
    }
}
