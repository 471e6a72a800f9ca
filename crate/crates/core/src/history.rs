//! The list of finished trials shared by all replicas.

use std::path::PathBuf;
use std::sync::Arc;

use crate::graph::ArchitectureGraph;
use crate::hpo::HyperParams;
use crate::opcount::OpCount;

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub digest: String,
    pub architecture_ref: PathBuf,
    pub architecture: Arc<ArchitectureGraph>,
    pub hyperparams: HyperParams,
    /// Lowest validation error reached, in (0, 1).
    pub best_error: f64,
    /// Forward plus backward count for one image.
    pub per_image_ops: OpCount,
    pub parameters: u64,
    pub epochs_run: u32,
    pub wall_seconds: f64,
    /// Virtual time at which the trial finished.
    pub completed_at: f64,
    pub replica: u32,
}

/// Best record: lowest error, earliest completion on ties.
pub fn best_record(history: &[HistoryRecord]) -> Option<&HistoryRecord> {
    history.iter().min_by(|a, b| {
        a.best_error
            .total_cmp(&b.best_error)
            .then(a.completed_at.total_cmp(&b.completed_at))
    })
}

/// Append-only store with cheap immutable snapshots.
///
/// A snapshot is an `Arc` of the vector at that moment; appends copy on
/// write only while an older snapshot is still held.
#[derive(Debug, Default, Clone)]
pub struct HistoryStore {
    records: Arc<Vec<HistoryRecord>>,
}

impl HistoryStore {
    pub fn snapshot(&self) -> Arc<Vec<HistoryRecord>> {
        Arc::clone(&self.records)
    }

    /// Returns false (and stores nothing) when the digest is already present.
    pub fn append(&mut self, record: HistoryRecord) -> bool {
        if self.contains(&record.digest) {
            return false;
        }
        Arc::make_mut(&mut self.records).push(record);
        true
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.records.iter().any(|r| r.digest == digest)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
