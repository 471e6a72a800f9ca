//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when the input is invalid or the run does not
//! meet the error limit, 2 on usage and runtime errors.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{self, BenchmarkConfig, ConfigError, ExecutorKind, SEED_ENV};
use crate::graph::{ArchitectureGraph, LayerKind, TensorShape};
use crate::harness::{self, CommandExecutor, Executor, HarnessError, HarnessOptions, RunLog, SimulatedExecutor};
use crate::morph::{self, MorphAction};
use crate::opcount::{self, DatasetDescriptor};
use crate::score;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

pub const RUN_LOG_FILE: &str = "run.log";

#[derive(Debug, Parser)]
#[command(name = "aiperf", version, about = "AutoML benchmark: operation counting, NAS workload and scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the benchmark and write the run log and report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print per-layer-class epoch operation counts as CSV.
    Count {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        train_images: u64,
        #[arg(long)]
        val_images: u64,
        #[arg(long)]
        image_shape: TensorShape,
    },
    /// Score an existing run log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one morphism action to an architecture file.
    Morph {
        #[arg(long)]
        arch: PathBuf,
        /// `deepen:<node>[:<kernel>]`, `widen:<node>`, `kernel:<node>:<k>`
        /// or `skip:<node>:<span>`.
        #[arg(long)]
        action: MorphAction,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the ResNet-50 seed architecture.
    Seed {
        #[arg(long, default_value = "224x224x3")]
        image_shape: TensorShape,
        #[arg(long, default_value_t = 1000)]
        classes: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_INVALID, message: e.to_string() }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_ERROR, message: e.to_string() }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn read_arch(path: &Path) -> Result<ArchitectureGraph, Failure> {
    read(path)?.parse::<ArchitectureGraph>().map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn config_failure(e: ConfigError) -> Failure {
    match e {
        ConfigError::Io(_) => runtime(e),
        _ => invalid(e),
    }
}

/// CSV of epoch operation counts per layer class. FP columns cover training
/// and validation images, BP columns training images only; `bp_fp_ratio`
/// is the per-image ratio.
pub fn count_csv(graph: &ArchitectureGraph, data: &DatasetDescriptor) -> Result<String, crate::graph::GraphError> {
    let b = opcount::breakdown(graph)?;
    opcount::count_epoch(graph, data)?;
    let fp_images = u128::from(data.train_images()) + u128::from(data.val_images());
    let bp_images = u128::from(data.train_images());
    let ratio = |fp: u128, bp: u128| if fp == 0 { 0.0 } else { bp as f64 / fp as f64 };
    let mut out = String::from("layer_class,fp_ops,bp_ops,bp_fp_ratio,total_ops\n");
    let mut row = |name: &str, fp: u128, bp: u128| {
        let (efp, ebp) = (fp * fp_images, bp * bp_images);
        out.push_str(&format!("{name},{efp},{ebp},{:.4},{}\n", ratio(fp, bp), efp + ebp));
    };
    for kind in LayerKind::ALL {
        if b.classes.contains_key(&kind) {
            row(kind.name(), b.fp(kind).weighted_total(), b.bp(kind).weighted_total());
        }
    }
    row("Total", b.total_fp().weighted_total(), b.total_bp().weighted_total());
    Ok(out)
}

fn count(arch: &Path, train: u64, val: u64, shape: TensorShape) -> Result<i32, Failure> {
    let graph = read_arch(arch)?;
    let data = DatasetDescriptor::new(train, val, shape).map_err(invalid)?;
    print!("{}", count_csv(&graph, &data).map_err(invalid)?);
    Ok(EXIT_OK)
}

fn report_from_log(log: &RunLog, out: &Path) -> Result<i32, Failure> {
    let series = score::compute_score_series(log).map_err(invalid)?;
    score::emit_report(&series, log, out).map_err(runtime)?;
    print!("{}", score::summary_text(&series, log));
    Ok(if series.valid() { EXIT_OK } else { EXIT_INVALID })
}

fn report(log_path: &Path, out: &Path) -> Result<i32, Failure> {
    let log = RunLog::parse(&read(log_path)?).map_err(invalid)?;
    report_from_log(&log, out)
}

fn morph_cmd(arch: &Path, action: MorphAction, out: &Path) -> Result<i32, Failure> {
    let graph = read_arch(arch)?;
    let child = morph::apply_morph(&graph, action).map_err(invalid)?;
    std::fs::write(out, child.to_string()).map_err(runtime)?;
    println!("{}", child.digest());
    Ok(EXIT_OK)
}

fn seed_cmd(shape: TensorShape, classes: u32, out: &Path) -> Result<i32, Failure> {
    let graph = crate::resnet::build_resnet50(shape, classes).map_err(invalid)?;
    std::fs::write(out, graph.to_string()).map_err(runtime)?;
    println!("{}", graph.digest());
    Ok(EXIT_OK)
}

/// Header lines of a run log: the resolved configuration and its flags.
pub fn run_header(config: &BenchmarkConfig) -> Vec<String> {
    let mut header = vec![format!("nonstandard={}", config.nonstandard()), "config:".to_string()];
    header.extend(config.to_toml().lines().map(|l| format!("  {l}")));
    header
}

fn run(config_path: &Path, out: &Path) -> Result<i32, Failure> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let config = config::load_config(config_path)
        .and_then(|c| c.with_seed_override(env_seed.as_deref()))
        .map_err(config_failure)?;
    let data = config.dataset().map_err(config_failure)?;
    std::fs::create_dir_all(out).map_err(runtime)?;

    let executor: Box<dyn Executor> = match config.executor.kind {
        ExecutorKind::Simulated => Box::new(SimulatedExecutor::new(config.cluster.clone())),
        ExecutorKind::Command => Box::new(
            CommandExecutor::new(config.executor.command_template.clone(), out.join(&config.executor.work_dir))
                .with_env(config.executor_env()),
        ),
    };
    let options = HarnessOptions {
        buffer_dir: Some(out.join("buffer")),
        schedule: config.schedule(),
        header: run_header(&config),
        num_classes: config.dataset.num_classes,
        default_hyperparams: config.default_hyperparams().map_err(config_failure)?,
    };
    let log = match harness::run_benchmark(&config.cluster, &data, executor.as_ref(), &options) {
        Ok(outcome) => outcome.log,
        Err(HarnessError::ExecutorFailure { replica, digest, source, log }) => {
            std::fs::write(out.join(RUN_LOG_FILE), log.to_text()).map_err(runtime)?;
            return Err(runtime(format!("replica {replica}, trial {digest}: {source}")));
        }
        Err(HarnessError::Config(m)) => return Err(invalid(m)),
        Err(e) => return Err(runtime(e)),
    };
    std::fs::write(out.join(RUN_LOG_FILE), log.to_text()).map_err(runtime)?;
    report_from_log(&log, out)
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run { config, out } => run(&config, &out),
        Command::Count { arch, train_images, val_images, image_shape } => {
            count(&arch, train_images, val_images, image_shape)
        }
        Command::Report { log, out } => report(&log, &out),
        Command::Morph { arch, action, out } => morph_cmd(&arch, action, &out),
        Command::Seed { image_shape, classes, out } => seed_cmd(image_shape, classes, &out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("aiperf: {}", f.message);
            f.code
        }
    }
}
