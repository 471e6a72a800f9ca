#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use aiperf::graph::{ArchitectureGraph, TensorShape};
use aiperf::history::HistoryRecord;
use aiperf::hpo::HyperParams;
use aiperf::opcount::OpCount;
use aiperf::resnet::build_resnet50;

pub fn shape(h: u32, w: u32, c: u32) -> TensorShape {
    TensorShape::new(h, w, c).unwrap()
}

pub fn resnet50() -> ArchitectureGraph {
    build_resnet50(shape(224, 224, 3), 1000).unwrap()
}

pub fn record(graph: ArchitectureGraph, best_error: f64, completed_at: f64) -> HistoryRecord {
    let parameters = graph.parameter_count().unwrap();
    HistoryRecord {
        digest: graph.digest(),
        architecture_ref: PathBuf::from(format!("{}.arch", graph.digest())),
        architecture: Arc::new(graph),
        hyperparams: HyperParams::default(),
        best_error,
        per_image_ops: OpCount::ZERO,
        parameters,
        epochs_run: 1,
        wall_seconds: 1.0,
        completed_at,
        replica: 0,
    }
}

/// Input -> conv -> GAP -> dense -> softmax.
pub fn conv_net(input: TensorShape, kernel: u32, stride: u32, out: u32) -> ArchitectureGraph {
    let text = format!(
        "input {input}\n0 Convolution k={kernel} s={stride} c={out} <- input\n1 GlobalAvgPool <- 0\n2 Dense c=10 <- 1\n3 Softmax <- 2\n"
    );
    text.parse().unwrap()
}

/// Synthetic HPO objective with its optimum at batch 256, kernel 3.
pub fn synthetic_error(p: HyperParams) -> f64 {
    let e = (p.batch_size() as f64 - 256.0).abs() / 512.0 + (p.kernel_size() as f64 - 3.0).abs() / 10.0;
    e.clamp(1e-3, 0.999)
}

/// The six best grid points of [`synthetic_error`].
pub fn top_quartile() -> Vec<HyperParams> {
    let mut grid: Vec<HyperParams> = HyperParams::grid().collect();
    grid.sort_by(|a, b| synthetic_error(*a).total_cmp(&synthetic_error(*b)));
    grid.truncate(grid.len() / 4);
    grid
}

/// Share of the last 20 of 40 suggest/observe rounds that land in the top
/// quartile.
pub fn tpe_concentration(rng_seed: u64) -> f64 {
    use aiperf::hpo::{suggest, HpoObservation};
    let top = top_quartile();
    let mut obs = Vec::new();
    let mut hits = 0;
    for round in 0..40 {
        let p = suggest(&obs, rng_seed);
        if round >= 20 && top.contains(&p) {
            hits += 1;
        }
        obs.push(HpoObservation::new(p, synthetic_error(p), false).unwrap());
    }
    hits as f64 / 20.0
}
