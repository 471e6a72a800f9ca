//! Training backends.
//!
//! The harness hands each epoch to an [`Executor`]. [`SimulatedExecutor`]
//! derives the epoch's duration from its analytical operation count and a
//! synthetic learning curve, so hours of cluster time replay in
//! milliseconds. [`CommandExecutor`] shells out to a real training script.

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::Rng;
use thiserror::Error;

use super::ClusterConfig;
use crate::graph::ArchitectureGraph;
use crate::hpo::HyperParams;
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecutorError {
    #[error("command `{command}` exited with {status}")]
    CommandFailed { command: String, status: String },
    #[error("cannot parse executor output: {0}")]
    ParseError(String),
    #[error("executor I/O: {0}")]
    Io(String),
    #[error("executor returned error={error} seconds={seconds}")]
    InvalidOutcome { error: f64, seconds: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochOutcome {
    /// Validation error after the epoch, in (0, 1).
    pub error: f64,
    pub wall_seconds: f64,
}

impl EpochOutcome {
    pub fn check(self) -> Result<Self, ExecutorError> {
        let ok = self.error > 0.0 && self.error < 1.0 && self.wall_seconds > 0.0 && self.wall_seconds.is_finite();
        if ok {
            Ok(self)
        } else {
            Err(ExecutorError::InvalidOutcome { error: self.error, seconds: self.wall_seconds })
        }
    }
}

/// What an executor needs to know about the trial it is training.
#[derive(Debug, Clone, Copy)]
pub struct TrialContext<'a> {
    pub replica: u32,
    pub digest: &'a str,
    /// Architecture with the trial's hyperparameters applied.
    pub graph: &'a ArchitectureGraph,
    pub arch_file: &'a Path,
    pub hyperparams: HyperParams,
    /// Weighted training + validation operations of one epoch.
    pub epoch_ops: u128,
}

pub trait Executor: Send + Sync {
    fn run_epoch(&self, trial: &TrialContext<'_>, epoch: u32) -> Result<EpochOutcome, ExecutorError>;
}

pub const CURVE_START: f64 = 0.9;
pub const CURVE_TAU_EPOCHS: f64 = 8.0;
pub const FLOOR_RANGE: (f64, f64) = (0.18, 0.35);
pub const NOISE_AMPLITUDE: f64 = 0.005;

/// Plateau error of a trial, fixed by its architecture and hyperparameters.
pub fn error_floor(digest: &str, params: HyperParams, rng_seed: u64) -> f64 {
    let mut rng = seed::rng(
        rng_seed,
        &[seed::hash_str(digest), params.batch_size() as u64, params.kernel_size() as u64],
    );
    rng.random_range(FLOOR_RANGE.0..=FLOOR_RANGE.1)
}

/// Duration and validation error of one simulated epoch.
///
/// `wall = ops / (accelerators · peak · efficiency) + overhead` and
/// `error = floor + (0.9 − floor)·exp(−epoch/8) + noise`.
pub fn simulated_run_epoch(
    digest: &str,
    params: HyperParams,
    epoch: u32,
    epoch_ops: u128,
    device: &ClusterConfig,
    rng_seed: u64,
) -> (f64, f64) {
    let wall = epoch_ops as f64 / device.replica_throughput() + device.epoch_overhead_seconds;
    let floor = error_floor(digest, params, rng_seed);
    let mut rng = seed::rng(
        rng_seed,
        &[seed::hash_str(digest), params.batch_size() as u64, params.kernel_size() as u64, epoch as u64],
    );
    let noise = rng.random_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
    let error = floor + (CURVE_START - floor) * (-(epoch as f64) / CURVE_TAU_EPOCHS).exp() + noise;
    (error.clamp(1e-3, 0.999), wall)
}

#[derive(Debug, Clone)]
pub struct SimulatedExecutor {
    device: ClusterConfig,
    rng_seed: u64,
}

impl SimulatedExecutor {
    pub fn new(device: ClusterConfig) -> Self {
        let rng_seed = device.rng_seed;
        SimulatedExecutor { device, rng_seed }
    }
}

impl Executor for SimulatedExecutor {
    fn run_epoch(&self, trial: &TrialContext<'_>, epoch: u32) -> Result<EpochOutcome, ExecutorError> {
        let (error, wall_seconds) =
            simulated_run_epoch(trial.digest, trial.hyperparams, epoch, trial.epoch_ops, &self.device, self.rng_seed);
        Ok(EpochOutcome { error, wall_seconds })
    }
}

/// Runs a shell command per epoch.
///
/// The template may use `{arch_file}`, `{epoch}`, `{batch_size}`,
/// `{kernel_size}` and `{out_file}`. The command must write
/// `error=<float> seconds=<float>` to `{out_file}`.
#[derive(Debug, Clone)]
pub struct CommandExecutor {
    template: String,
    work_dir: PathBuf,
    env: Vec<(String, String)>,
}

impl CommandExecutor {
    pub fn new(template: impl Into<String>, work_dir: impl Into<PathBuf>) -> Self {
        CommandExecutor { template: template.into(), work_dir: work_dir.into(), env: Vec::new() }
    }

    /// Extra environment variables for every spawned command.
    pub fn with_env(mut self, env: Vec<(String, String)>) -> Self {
        self.env = env;
        self
    }

    pub fn render(&self, arch_file: &Path, epoch: u32, params: HyperParams, out_file: &Path) -> String {
        self.template
            .replace("{arch_file}", &arch_file.display().to_string())
            .replace("{epoch}", &epoch.to_string())
            .replace("{batch_size}", &params.batch_size().to_string())
            .replace("{kernel_size}", &params.kernel_size().to_string())
            .replace("{out_file}", &out_file.display().to_string())
    }
}

/// Reads `error=<float> seconds=<float>` from executor output.
pub fn parse_epoch_output(text: &str) -> Result<EpochOutcome, ExecutorError> {
    let field = |key: &str| -> Result<f64, ExecutorError> {
        let token = text
            .split_whitespace()
            .find_map(|t| t.strip_prefix(key))
            .ok_or_else(|| ExecutorError::ParseError(format!("missing `{key}`")))?;
        token.parse().map_err(|_| ExecutorError::ParseError(format!("bad value `{key}{token}`")))
    };
    Ok(EpochOutcome { error: field("error=")?, wall_seconds: field("seconds=")? })
}

impl Executor for CommandExecutor {
    fn run_epoch(&self, trial: &TrialContext<'_>, epoch: u32) -> Result<EpochOutcome, ExecutorError> {
        let io = |e: std::io::Error| ExecutorError::Io(e.to_string());
        std::fs::create_dir_all(&self.work_dir).map_err(io)?;
        let out_file = self.work_dir.join(format!("r{}-{}-e{epoch}.out", trial.replica, trial.digest));
        if out_file.exists() {
            std::fs::remove_file(&out_file).map_err(io)?;
        }
        let command = self.render(trial.arch_file, epoch, trial.hyperparams, &out_file);
        let status = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .envs(self.env.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .status()
            .map_err(io)?;
        if !status.success() {
            return Err(ExecutorError::CommandFailed { command, status: status.to_string() });
        }
        let text = std::fs::read_to_string(&out_file).map_err(io)?;
        parse_epoch_output(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wall_time_formula() {
        let device = ClusterConfig {
            accelerators_per_replica: 8,
            peak_ops_per_accelerator: 1.25e14,
            efficiency: 0.5,
            epoch_overhead_seconds: 60.0,
            ..ClusterConfig::default()
        };
        let (_, wall) = simulated_run_epoch("abc", HyperParams::default(), 1, 3_600_000_000_000_000, &device, 1);
        assert!((wall - 67.2).abs() < 1e-9);
        let (_, wall) = simulated_run_epoch("abc", HyperParams::default(), 1, 3_600_000_000_000_000_000, &device, 1);
        assert_eq!(wall, 7260.0);
    }

    #[test]
    fn curve_settles_on_floor() {
        let device = ClusterConfig::default();
        let p = HyperParams::default();
        let floor = error_floor("abc", p, 3);
        assert!((FLOOR_RANGE.0..=FLOOR_RANGE.1).contains(&floor));
        let (late, _) = simulated_run_epoch("abc", p, 500, 1, &device, 3);
        assert!((late - floor).abs() <= NOISE_AMPLITUDE + 1e-12);
        assert_eq!(simulated_run_epoch("abc", p, 4, 10, &device, 3), simulated_run_epoch("abc", p, 4, 10, &device, 3));
    }

    #[test]
    fn output_parsing() {
        assert_eq!(parse_epoch_output("error=0.25 seconds=10.0\n").unwrap(), EpochOutcome { error: 0.25, wall_seconds: 10.0 });
        assert!(matches!(parse_epoch_output("seconds=10.0"), Err(ExecutorError::ParseError(_))));
        assert!(matches!(parse_epoch_output("error=abc seconds=1"), Err(ExecutorError::ParseError(_))));
    }

    #[test]
    fn outcome_bounds() {
        assert!(EpochOutcome { error: 1.0, wall_seconds: 1.0 }.check().is_err());
        assert!(EpochOutcome { error: 0.5, wall_seconds: 0.0 }.check().is_err());
        assert!(EpochOutcome { error: 0.5, wall_seconds: 1.0 }.check().is_ok());
    }
}
