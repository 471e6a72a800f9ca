//! Patience-based early stopping.

/// Smallest drop in the best error that counts as progress.
pub const MIN_IMPROVEMENT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    EarlyStopped,
    MaxEpochReached,
}

/// Decides whether a trial keeps training after the epochs in `errors`.
///
/// The epoch limit wins over patience. Otherwise training stops once the
/// best error of the last `patience` epochs is not at least
/// [`MIN_IMPROVEMENT`] below the best error before them.
pub fn early_stop_decision(errors: &[f64], patience: u32, max_epoch: u32) -> StopDecision {
    let n = errors.len();
    if n >= max_epoch as usize {
        return StopDecision::MaxEpochReached;
    }
    let patience = patience as usize;
    if patience == 0 || n <= patience {
        return StopDecision::Continue;
    }
    let (before, recent) = errors.split_at(n - patience);
    let best_before = before.iter().copied().fold(f64::INFINITY, f64::min);
    let best_recent = recent.iter().copied().fold(f64::INFINITY, f64::min);
    if best_before - best_recent >= MIN_IMPROVEMENT {
        StopDecision::Continue
    } else {
        StopDecision::EarlyStopped
    }
}
