//! The run log: one CSV record per harness event, preceded by `#`
//! provenance lines.
//!
//! ```text
//! # aiperf run log v1
//! # seed=42
//! ts_seconds,replica_id,trial_digest,event,epoch_index,error,epoch_ops,wall_seconds
//! 0,0,3f0c2a9d1b7e4c55,proposed,0,,30228050648582120,0
//! 120.45,0,3f0c2a9d1b7e4c55,epoch,1,0.7912,30228050648582120,120.45
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so parsing a log
//! and writing it back reproduces the original bytes.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const MAGIC: &str = "aiperf run log v1";
pub const COLUMNS: &str = "ts_seconds,replica_id,trial_digest,event,epoch_index,error,epoch_ops,wall_seconds";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed run log, line {line}: {msg}")]
pub struct MalformedLog {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// A candidate left the buffer and became a trial.
    Proposed,
    /// One training + validation epoch finished.
    Epoch,
    /// The trial ended (early stop, epoch limit or budget).
    Stopped,
    /// The trial was appended to the shared history.
    Recorded,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Proposed => "proposed",
            EventKind::Epoch => "epoch",
            EventKind::Stopped => "stopped",
            EventKind::Recorded => "recorded",
        })
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(EventKind::Proposed),
            "epoch" => Ok(EventKind::Epoch),
            "stopped" => Ok(EventKind::Stopped),
            "recorded" => Ok(EventKind::Recorded),
            _ => Err(format!("unknown event `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEvent {
    pub ts_seconds: f64,
    pub replica_id: u32,
    pub trial_digest: String,
    pub event: EventKind,
    pub epoch_index: u32,
    pub error: Option<f64>,
    pub epoch_ops: u128,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    /// Provenance lines, without the leading `# `.
    pub header: Vec<String>,
    pub events: Vec<LogEvent>,
}

impl RunLog {
    /// Value of a `key=value` header line.
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
    }

    pub fn epochs(&self) -> impl Iterator<Item = &LogEvent> {
        self.events.iter().filter(|e| e.event == EventKind::Epoch)
    }

    /// Distinct trials that appear in the log.
    pub fn trial_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.event == EventKind::Proposed)
            .map(|e| (e.replica_id, e.trial_digest.as_str()))
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// The epoch with the lowest validation error; earliest wins ties.
    pub fn best_epoch(&self) -> Option<&LogEvent> {
        self.epochs()
            .filter(|e| e.error.is_some())
            .min_by(|a, b| a.error.unwrap().total_cmp(&b.error.unwrap()).then(a.ts_seconds.total_cmp(&b.ts_seconds)))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# {MAGIC}\n");
        for line in &self.header {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(COLUMNS);
        out.push('\n');
        for e in &self.events {
            let error = e.error.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.ts_seconds, e.replica_id, e.trial_digest, e.event, e.epoch_index, error, e.epoch_ops, e.wall_seconds
            ));
        }
        out
    }

    /// Parses a log and checks that each replica's timestamps never go
    /// backwards.
    pub fn parse(text: &str) -> Result<RunLog, MalformedLog> {
        let mut log = RunLog::default();
        let mut seen_columns = false;
        let mut last_ts: HashMap<u32, f64> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let bad = |msg: String| MalformedLog { line, msg };
            if raw.trim().is_empty() {
                continue;
            }
            if let Some(comment) = raw.strip_prefix('#') {
                let comment = comment.strip_prefix(' ').unwrap_or(comment);
                if !seen_columns && comment != MAGIC {
                    log.header.push(comment.to_string());
                }
                continue;
            }
            if !seen_columns {
                if raw.trim() != COLUMNS {
                    return Err(bad("expected column header".into()));
                }
                seen_columns = true;
                continue;
            }
            let fields: Vec<&str> = raw.split(',').collect();
            if fields.len() != 8 {
                return Err(bad(format!("expected 8 fields, found {}", fields.len())));
            }
            let num = |idx: usize, name: &str| -> Result<f64, MalformedLog> {
                fields[idx].parse::<f64>().map_err(|_| bad(format!("bad {name} `{}`", fields[idx])))
            };
            let ts_seconds = num(0, "timestamp")?;
            let wall_seconds = num(7, "wall_seconds")?;
            if !ts_seconds.is_finite() || ts_seconds < 0.0 || !wall_seconds.is_finite() || wall_seconds < 0.0 {
                return Err(bad("negative or non-finite time".into()));
            }
            let replica_id: u32 = fields[1].parse().map_err(|_| bad(format!("bad replica `{}`", fields[1])))?;
            let event: EventKind = fields[3].parse().map_err(bad)?;
            let epoch_index: u32 = fields[4].parse().map_err(|_| bad(format!("bad epoch `{}`", fields[4])))?;
            let error = if fields[5].is_empty() {
                None
            } else {
                let e = num(5, "error")?;
                if !(e > 0.0 && e < 1.0) {
                    return Err(bad(format!("error {e} outside (0, 1)")));
                }
                Some(e)
            };
            if event == EventKind::Epoch && error.is_none() {
                return Err(bad("epoch event without error".into()));
            }
            let epoch_ops: u128 = fields[6].parse().map_err(|_| bad(format!("bad epoch_ops `{}`", fields[6])))?;
            let prev = last_ts.insert(replica_id, ts_seconds);
            if prev.is_some_and(|p| ts_seconds < p) {
                return Err(bad(format!("replica {replica_id} goes back in time")));
            }
            log.events.push(LogEvent {
                ts_seconds,
                replica_id,
                trial_digest: fields[2].to_string(),
                event,
                epoch_index,
                error,
                epoch_ops,
                wall_seconds,
            });
        }
        if !seen_columns && !log.header.is_empty() {
            return Err(MalformedLog { line: text.lines().count(), msg: "missing column header".into() });
        }
        Ok(log)
    }
}
