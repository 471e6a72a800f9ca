//! Turning a run log into the benchmark score.
//!
//! The score is sampled every 0.1 hour. At each step `t` it is the total
//! weighted operations of all epochs that finished by `t`, divided by `t`.
//! The regulated score multiplies that rate by `−ln(error)`, where `error`
//! is the best validation error seen so far, so a run is rewarded both for
//! throughput and for accuracy. A run whose best error stays above
//! [`MAX_ERROR`] is invalid.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::harness::{EventKind, MalformedLog, RunLog};

pub const STEP_SECONDS: f64 = 360.0;
pub const MAX_ERROR: f64 = 0.30;
pub const INVALID_MARKER: &str = "INVALID (error > 30%)";

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("error {0} outside (0, 1)")]
    Domain(f64),
    #[error("ops per second {0} is negative or not finite")]
    NegativeOps(f64),
    #[error(transparent)]
    Malformed(#[from] MalformedLog),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
}

/// `−ln(error) · ops_per_second`.
pub fn regulated_score(error: f64, ops_per_second: f64) -> Result<f64, ScoreError> {
    if !(error > 0.0 && error < 1.0) {
        return Err(ScoreError::Domain(error));
    }
    if !(ops_per_second.is_finite() && ops_per_second >= 0.0) {
        return Err(ScoreError::NegativeOps(ops_per_second));
    }
    Ok(-error.ln() * ops_per_second)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorePoint {
    pub t_seconds: f64,
    pub cumulative_ops: u128,
    pub ops_per_second: f64,
    /// Best error observed by `t`, or 1.0 before the first epoch.
    pub min_error: f64,
    pub regulated_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub step_seconds: f64,
    pub points: Vec<ScorePoint>,
}

impl ScoreSeries {
    /// Ops per second at the last step; zero for an empty run.
    pub fn final_score(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.ops_per_second)
    }

    pub fn final_regulated_score(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.regulated_score)
    }

    pub fn final_min_error(&self) -> f64 {
        self.points.last().map_or(1.0, |p| p.min_error)
    }

    pub fn valid(&self) -> bool {
        !self.points.is_empty() && self.final_min_error() <= MAX_ERROR
    }
}

/// Samples the cumulative score every [`STEP_SECONDS`] up to the first
/// step at or after the last event.
pub fn compute_score_series(log: &RunLog) -> Result<ScoreSeries, ScoreError> {
    let mut last: HashMap<u32, f64> = HashMap::new();
    for (i, e) in log.events.iter().enumerate() {
        let bad = |msg: String| MalformedLog { line: i + 1, msg };
        if !(e.ts_seconds.is_finite() && e.ts_seconds >= 0.0) {
            return Err(bad(format!("timestamp {}", e.ts_seconds)).into());
        }
        if last.insert(e.replica_id, e.ts_seconds).is_some_and(|p| e.ts_seconds < p) {
            return Err(bad(format!("replica {} goes back in time", e.replica_id)).into());
        }
        if e.event == EventKind::Epoch && !e.error.is_some_and(|x| x > 0.0 && x < 1.0) {
            return Err(bad("epoch event needs an error in (0, 1)".into()).into());
        }
    }

    let mut epochs: Vec<(f64, u128, f64)> =
        log.epochs().map(|e| (e.ts_seconds, e.epoch_ops, e.error.unwrap_or(1.0))).collect();
    epochs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let end = log.events.iter().map(|e| e.ts_seconds).fold(0.0, f64::max);
    let steps = (end / STEP_SECONDS).ceil() as u64;

    let mut points = Vec::with_capacity(steps as usize);
    let mut next = 0;
    let mut ops: u128 = 0;
    let mut min_error: f64 = 1.0;
    for k in 1..=steps {
        let t = k as f64 * STEP_SECONDS;
        while next < epochs.len() && epochs[next].0 <= t {
            ops += epochs[next].1;
            min_error = min_error.min(epochs[next].2);
            next += 1;
        }
        let ops_per_second = ops as f64 / t;
        let regulated = if min_error < 1.0 { regulated_score(min_error, ops_per_second)? } else { 0.0 };
        points.push(ScorePoint { t_seconds: t, cumulative_ops: ops, ops_per_second, min_error, regulated_score: regulated });
    }
    Ok(ScoreSeries { step_seconds: STEP_SECONDS, points })
}

pub fn score_csv(series: &ScoreSeries) -> String {
    let mut out = String::from("t_seconds,cumulative_ops,ops_per_second,min_error,regulated_score\n");
    for p in &series.points {
        let _ = writeln!(out, "{},{},{},{},{}", p.t_seconds, p.cumulative_ops, p.ops_per_second, p.min_error, p.regulated_score);
    }
    out
}

pub fn summary_text(series: &ScoreSeries, log: &RunLog) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "final_score_ops_per_second={}", series.final_score());
    let _ = writeln!(out, "regulated_score={}", series.final_regulated_score());
    let _ = writeln!(out, "valid={}", series.valid());
    let _ = writeln!(out, "trials={}", log.trial_count());
    match log.best_epoch() {
        Some(best) => {
            let _ = writeln!(out, "best_error={}", best.error.unwrap_or(1.0));
            let _ = writeln!(out, "best_digest={}", best.trial_digest);
        }
        None => {
            let _ = writeln!(out, "best_error=none");
            let _ = writeln!(out, "best_digest=none");
        }
    }
    let _ = writeln!(out, "nonstandard={}", log.header_value("nonstandard").unwrap_or("false"));
    if !series.valid() {
        let _ = writeln!(out, "status={INVALID_MARKER}");
    } else {
        let _ = writeln!(out, "status=VALID");
    }
    out
}

const SVG_W: f64 = 720.0;
const SVG_H: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn polyline(series: &ScoreSeries, value: impl Fn(&ScorePoint) -> f64, color: &str) -> String {
    let t_max = series.points.last().map_or(1.0, |p| p.t_seconds);
    let v_max = series.points.iter().map(&value).fold(0.0, f64::max);
    let v_max = if v_max > 0.0 { v_max } else { 1.0 };
    let coords: Vec<String> = series
        .points
        .iter()
        .map(|p| {
            let x = MARGIN + (SVG_W - 2.0 * MARGIN) * p.t_seconds / t_max;
            let y = SVG_H - MARGIN - (SVG_H - 2.0 * MARGIN) * value(p) / v_max;
            format!("{x:.1},{y:.1}")
        })
        .collect();
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n", coords.join(" "))
}

/// Score and regulated score against time, each scaled to its own maximum.
pub fn score_svg(series: &ScoreSeries) -> String {
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let (x0, y0, x1, y1) = (MARGIN, SVG_H - MARGIN, SVG_W - MARGIN, MARGIN);
    let _ = writeln!(out, "<path d=\"M{x0},{y1} L{x0},{y0} L{x1},{y0}\" stroke=\"black\" fill=\"none\"/>");
    let hours = series.points.last().map_or(0.0, |p| p.t_seconds / 3600.0);
    let _ = writeln!(out, "<text x=\"{x0}\" y=\"{}\" font-size=\"12\">0 h</text>", y0 + 16.0);
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" font-size=\"12\">{hours:.1} h</text>", x1 - 30.0, y0 + 16.0);
    let _ = writeln!(
        out,
        "<text x=\"{x0}\" y=\"{}\" font-size=\"12\" fill=\"steelblue\">score {:.3e} OPS</text>",
        y1 - 20.0,
        series.final_score()
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"darkorange\">regulated {:.3e}</text>",
        x0 + 260.0,
        y1 - 20.0,
        series.final_regulated_score()
    );
    if !series.points.is_empty() {
        out.push_str(&polyline(series, |p| p.ops_per_second, "steelblue"));
        out.push_str(&polyline(series, |p| p.regulated_score, "darkorange"));
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `score.csv`, `summary.txt` and `score.svg` into `out_dir`.
pub fn emit_report(series: &ScoreSeries, log: &RunLog, out_dir: &Path) -> Result<(), ScoreError> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("score.csv"), score_csv(series))?;
    std::fs::write(out_dir.join("summary.txt"), summary_text(series, log))?;
    std::fs::write(out_dir.join("score.svg"), score_svg(series))?;
    Ok(())
}
