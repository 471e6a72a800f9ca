//! Batch-size and kernel-size tuning with a categorical TPE.
//!
//! The search space is the 6 × 4 grid of [`BATCH_SIZES`] × [`KERNEL_SIZES`].
//! Until four observations exist the optimizer walks a seeded Halton
//! sequence over the grid. After that, observations are split at the 25%
//! error quantile into a good and a bad set, each dimension gets an
//! add-one-smoothed categorical density per set, and the grid point with
//! the largest product of `good / bad` density ratios wins.

use thiserror::Error;

use crate::history::HistoryRecord;

pub const BATCH_SIZES: [u32; 6] = [32, 64, 128, 256, 448, 512];
pub const KERNEL_SIZES: [u32; 4] = [1, 3, 5, 7];
pub const DEFAULT_BATCH_SIZE: u32 = 448;
pub const DEFAULT_KERNEL_SIZE: u32 = 3;
/// Number of rounds that use quasi-random points and predicted errors.
pub const WARMUP_ROUNDS: usize = 3;
pub const GAMMA: f64 = 0.25;
/// Error assumed for a warm-up trial when nothing has finished yet.
pub const PRIOR_ERROR: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HpoError {
    #[error("batch size {0} not in {BATCH_SIZES:?}")]
    BatchSize(u32),
    #[error("kernel size {0} not in {KERNEL_SIZES:?}")]
    KernelSize(u32),
    #[error("error {0} outside (0, 1)")]
    Error(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HyperParams {
    batch_size: u32,
    kernel_size: u32,
}

impl HyperParams {
    pub fn new(batch_size: u32, kernel_size: u32) -> Result<Self, HpoError> {
        if !BATCH_SIZES.contains(&batch_size) {
            return Err(HpoError::BatchSize(batch_size));
        }
        if !KERNEL_SIZES.contains(&kernel_size) {
            return Err(HpoError::KernelSize(kernel_size));
        }
        Ok(HyperParams { batch_size, kernel_size })
    }

    pub fn batch_size(&self) -> u32 {
        self.batch_size
    }

    pub fn kernel_size(&self) -> u32 {
        self.kernel_size
    }

    /// All 24 grid points, batch-major.
    pub fn grid() -> impl Iterator<Item = HyperParams> {
        BATCH_SIZES
            .iter()
            .flat_map(|&b| KERNEL_SIZES.iter().map(move |&k| HyperParams { batch_size: b, kernel_size: k }))
    }
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams { batch_size: DEFAULT_BATCH_SIZE, kernel_size: DEFAULT_KERNEL_SIZE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HpoObservation {
    pub params: HyperParams,
    pub error: f64,
    /// Set during warm-up, when `error` is a prediction rather than a
    /// measurement.
    pub predicted: bool,
}

impl HpoObservation {
    pub fn new(params: HyperParams, error: f64, predicted: bool) -> Result<Self, HpoError> {
        if !(error > 0.0 && error < 1.0) {
            return Err(HpoError::Error(error));
        }
        Ok(HpoObservation { params, error, predicted })
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Point `n` of the seeded Halton walk over the grid.
pub fn halton_point(n: usize, rng_seed: u64) -> HyperParams {
    let index = n as u64 + 1 + rng_seed % 4096;
    let b = (radical_inverse(index, 2) * BATCH_SIZES.len() as f64) as usize;
    let k = (radical_inverse(index, 3) * KERNEL_SIZES.len() as f64) as usize;
    HyperParams { batch_size: BATCH_SIZES[b], kernel_size: KERNEL_SIZES[k] }
}

fn density<T: PartialEq>(set: &[&HpoObservation], value: &T, domain: usize, pick: impl Fn(&HpoObservation) -> T) -> f64 {
    let hits = set.iter().filter(|o| pick(o) == *value).count();
    (hits as f64 + 1.0) / (set.len() as f64 + domain as f64)
}

/// `good / bad` density ratio of every grid point, in grid order.
pub fn tpe_ratios(observations: &[HpoObservation]) -> Vec<(HyperParams, f64)> {
    let mut order: Vec<usize> = (0..observations.len()).collect();
    order.sort_by(|&a, &b| observations[a].error.total_cmp(&observations[b].error).then(a.cmp(&b)));
    let n_good = ((GAMMA * observations.len() as f64).ceil() as usize).max(1);
    let good: Vec<&HpoObservation> = order[..n_good].iter().map(|&i| &observations[i]).collect();
    let bad: Vec<&HpoObservation> = order[n_good..].iter().map(|&i| &observations[i]).collect();

    HyperParams::grid()
        .map(|p| {
            let l = density(&good, &p.batch_size, BATCH_SIZES.len(), |o| o.params.batch_size)
                * density(&good, &p.kernel_size, KERNEL_SIZES.len(), |o| o.params.kernel_size);
            let g = density(&bad, &p.batch_size, BATCH_SIZES.len(), |o| o.params.batch_size)
                * density(&bad, &p.kernel_size, KERNEL_SIZES.len(), |o| o.params.kernel_size);
            (p, l / g)
        })
        .collect()
}

/// Next hyperparameters to try. Ties go to the earliest grid point.
pub fn suggest(observations: &[HpoObservation], rng_seed: u64) -> HyperParams {
    if observations.len() <= WARMUP_ROUNDS {
        return halton_point(observations.len(), rng_seed);
    }
    let mut best: Option<(HyperParams, f64)> = None;
    for (p, r) in tpe_ratios(observations) {
        if best.is_none_or(|(_, br)| r > br) {
            best = Some((p, r));
        }
    }
    best.expect("grid is non-empty").0
}

/// Error assumed for a warm-up trial: the mean best error of the three
/// history records whose parameter count is closest (relative difference)
/// to the candidate's.
pub fn predict_warmup_error(history: &[HistoryRecord], candidate_parameters: u64) -> f64 {
    if history.is_empty() {
        return PRIOR_ERROR;
    }
    let rel = |p: u64| {
        let scale = p.max(candidate_parameters).max(1) as f64;
        (p as f64 - candidate_parameters as f64).abs() / scale
    };
    let mut ranked: Vec<(f64, usize)> = history.iter().enumerate().map(|(i, r)| (rel(r.parameters), i)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let nearest: Vec<f64> = ranked.iter().take(3).map(|&(_, i)| history[i].best_error).collect();
    let mean = nearest.iter().sum::<f64>() / nearest.len() as f64;
    mean.clamp(0.01, 0.99)
}
