//! Network morphism: grow child architectures from a parent while keeping
//! the image input and the softmax width unchanged.
//!
//! Four actions are available:
//!
//! * `DeepenBlock` inserts a convolution + batch norm + ReLU block after a
//!   feature-map node. The convolution keeps the channel count and uses
//!   stride 1, so shapes downstream are untouched.
//! * `Widen` doubles the output channels of a convolution. Consumers that are
//!   themselves convolutions or dense layers absorb the change; residual adds
//!   whose branches now disagree get a 1×1 projection on the wider branch.
//! * `ChangeKernel` sets a convolution's kernel to one of 1, 3, 5 or 7.
//! * `AddSkip` joins a node's output into the node `span` steps downstream
//!   with an element-wise add, projecting with a 1×1 convolution when the
//!   channel count or resolution differ.
//!
//! Candidates for the next trial are drawn by applying one to three random
//! actions to the best architecture found so far, and ranked with a small
//! expected-improvement surrogate over the history.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::graph::{ArchitectureGraph, GraphError, Layer, LayerKind, Node, NodeId, Source};
use crate::history::{best_record, HistoryRecord};
use crate::seed;

pub const KERNEL_MENU: [u32; 4] = [1, 3, 5, 7];
pub const WIDEN_FACTOR: u32 = 2;
pub const MAX_SKIP_SPAN: u32 = 8;
pub const DEFAULT_MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MorphError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("inapplicable action: {0}")]
    InapplicableAction(String),
    #[error("cannot reconcile shapes: {0}")]
    ShapeRepairFailure(String),
    #[error("found only {found} of {wanted} novel candidates after {attempts} attempts")]
    ExhaustedSearch { found: usize, wanted: usize, attempts: usize },
    #[error("bad morph action `{0}`")]
    Parse(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MorphKind {
    DeepenBlock,
    Widen,
    ChangeKernel,
    AddSkip,
}

impl MorphKind {
    pub const ALL: [MorphKind; 4] = [MorphKind::DeepenBlock, MorphKind::Widen, MorphKind::ChangeKernel, MorphKind::AddSkip];
}

/// One morph step. `parameter` is the inserted kernel size for
/// `DeepenBlock`, the widen factor for `Widen`, the new kernel size for
/// `ChangeKernel` and the span for `AddSkip`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MorphAction {
    pub kind: MorphKind,
    pub target: NodeId,
    pub parameter: u32,
}

impl MorphAction {
    pub fn deepen(target: NodeId, kernel: u32) -> Self {
        MorphAction { kind: MorphKind::DeepenBlock, target, parameter: kernel }
    }

    pub fn widen(target: NodeId) -> Self {
        MorphAction { kind: MorphKind::Widen, target, parameter: WIDEN_FACTOR }
    }

    pub fn change_kernel(target: NodeId, kernel: u32) -> Self {
        MorphAction { kind: MorphKind::ChangeKernel, target, parameter: kernel }
    }

    pub fn add_skip(target: NodeId, span: u32) -> Self {
        MorphAction { kind: MorphKind::AddSkip, target, parameter: span }
    }
}

impl fmt::Display for MorphAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MorphKind::DeepenBlock => write!(f, "deepen:{}:{}", self.target, self.parameter),
            MorphKind::Widen => write!(f, "widen:{}", self.target),
            MorphKind::ChangeKernel => write!(f, "kernel:{}:{}", self.target, self.parameter),
            MorphKind::AddSkip => write!(f, "skip:{}:{}", self.target, self.parameter),
        }
    }
}

/// Parses `deepen:<node>[:<kernel>]`, `widen:<node>`, `kernel:<node>:<k>`
/// or `skip:<node>:<span>`.
impl FromStr for MorphAction {
    type Err = MorphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MorphError::Parse(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| parts.get(i).and_then(|p| p.parse::<u32>().ok()).ok_or_else(bad);
        let target = NodeId(num(1)?);
        let action = match (parts[0], parts.len()) {
            ("deepen", 2) => MorphAction::deepen(target, 3),
            ("deepen", 3) => MorphAction::deepen(target, num(2)?),
            ("widen", 2) => MorphAction::widen(target),
            ("kernel", 3) => MorphAction::change_kernel(target, num(2)?),
            ("skip", 3) => MorphAction::add_skip(target, num(2)?),
            _ => return Err(bad()),
        };
        Ok(action)
    }
}

fn is_feature_map(layer: &Layer) -> bool {
    matches!(
        layer.kind(),
        LayerKind::Convolution | LayerKind::BatchNorm | LayerKind::ReLU | LayerKind::Add | LayerKind::MaxPool
    )
}

/// Adds a chain of layers reading from `target` and moves every existing
/// consumer of `target` onto the end of the chain. Returns the chain's ids.
fn insert_after(graph: &mut ArchitectureGraph, target: NodeId, layers: &[Layer]) -> Vec<NodeId> {
    let consumers = graph.successors(target);
    let mut next = graph.next_id();
    let mut ids = Vec::with_capacity(layers.len());
    let mut prev = Source::Node(target);
    for layer in layers {
        let id = next;
        next = NodeId(next.0 + 1);
        graph.nodes_mut().push(Node { id, layer: *layer, inputs: vec![prev] });
        prev = Source::Node(id);
        ids.push(id);
    }
    for c in consumers {
        let node = graph.node_mut(c).expect("consumer exists");
        for src in node.inputs.iter_mut() {
            if *src == Source::Node(target) {
                *src = prev;
            }
        }
    }
    ids
}

/// Places `layer` on the edge feeding input `slot` of `consumer`.
fn insert_on_edge(graph: &mut ArchitectureGraph, consumer: NodeId, slot: usize, layer: Layer) -> NodeId {
    let id = graph.next_id();
    let node = graph.node_mut(consumer).expect("consumer exists");
    let src = node.inputs[slot];
    node.inputs[slot] = Source::Node(id);
    graph.nodes_mut().push(Node { id, layer, inputs: vec![src] });
    id
}

fn check_kernel(k: u32) -> Result<(), MorphError> {
    if KERNEL_MENU.contains(&k) {
        Ok(())
    } else {
        Err(MorphError::InapplicableAction(format!("kernel size {k} not in {KERNEL_MENU:?}")))
    }
}

/// Applies one morph action, returning the child graph.
pub fn apply_morph(graph: &ArchitectureGraph, action: MorphAction) -> Result<ArchitectureGraph, MorphError> {
    let target = graph.node(action.target).ok_or(MorphError::UnknownNode(action.target))?.clone();
    let shapes = graph.infer_shapes()?;
    let mut child = graph.clone();

    match action.kind {
        MorphKind::DeepenBlock => {
            check_kernel(action.parameter)?;
            if !is_feature_map(&target.layer) {
                return Err(MorphError::InapplicableAction(format!(
                    "cannot deepen after {} node {}",
                    target.layer.kind().name(),
                    target.id
                )));
            }
            let channels = shapes[&target.id].output.channels;
            insert_after(&mut child, target.id, &[Layer::conv(action.parameter, 1, channels), Layer::BatchNorm, Layer::ReLU]);
        }
        MorphKind::Widen => {
            if action.parameter != WIDEN_FACTOR {
                return Err(MorphError::InapplicableAction(format!("widen factor must be {WIDEN_FACTOR}")));
            }
            let Layer::Convolution { kernel, stride, out_channels } = target.layer else {
                return Err(MorphError::InapplicableAction(format!("node {} is not a convolution", target.id)));
            };
            let widened = out_channels
                .checked_mul(WIDEN_FACTOR)
                .ok_or_else(|| MorphError::InapplicableAction("channel count overflow".into()))?;
            child.node_mut(target.id).expect("target exists").layer = Layer::conv(kernel, stride, widened);
            repair_adds(&mut child)?;
        }
        MorphKind::ChangeKernel => {
            check_kernel(action.parameter)?;
            let Layer::Convolution { kernel, stride, out_channels } = target.layer else {
                return Err(MorphError::InapplicableAction(format!("node {} is not a convolution", target.id)));
            };
            if kernel == action.parameter {
                return Err(MorphError::InapplicableAction(format!("node {} already uses kernel {kernel}", target.id)));
            }
            child.node_mut(target.id).expect("target exists").layer = Layer::conv(action.parameter, stride, out_channels);
        }
        MorphKind::AddSkip => add_skip(&mut child, &shapes, &target, action.parameter)?,
    }

    child.validate()?;
    child.infer_shapes()?;
    Ok(child)
}

// Fixes residual adds whose branches disagree in channel count by projecting
// the wider branch back down.
fn repair_adds(graph: &mut ArchitectureGraph) -> Result<(), MorphError> {
    for _ in 0..=graph.len() {
        match graph.infer_shapes() {
            Ok(_) => return Ok(()),
            Err(GraphError::ShapeMismatch { node, left, right }) => {
                if (left.height, left.width) != (right.height, right.width) {
                    return Err(MorphError::ShapeRepairFailure(format!("add {node} joins {left} and {right}")));
                }
                let (slot, channels) =
                    if left.channels > right.channels { (0, right.channels) } else { (1, left.channels) };
                insert_on_edge(graph, node, slot, Layer::conv(1, 1, channels));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(MorphError::ShapeRepairFailure("projection repair did not converge".into()))
}

fn add_skip(
    graph: &mut ArchitectureGraph,
    shapes: &crate::graph::ShapeMap,
    from: &Node,
    span: u32,
) -> Result<(), MorphError> {
    if !(1..=MAX_SKIP_SPAN).contains(&span) {
        return Err(MorphError::InapplicableAction(format!("skip span {span} outside 1..={MAX_SKIP_SPAN}")));
    }
    if !is_feature_map(&from.layer) {
        return Err(MorphError::InapplicableAction(format!("cannot branch from {} node {}", from.layer.kind().name(), from.id)));
    }
    let mut to = from.id;
    for _ in 0..span {
        to = *graph
            .successors(to)
            .first()
            .ok_or_else(|| MorphError::InapplicableAction("skip runs past the sink".into()))?;
        let layer = graph.node(to).expect("successor exists").layer;
        if !is_feature_map(&layer) {
            return Err(MorphError::InapplicableAction(format!("skip of span {span} from {} leaves the feature maps", from.id)));
        }
    }
    let src = shapes[&from.id].output;
    let dst = shapes[&to].output;

    let stride = if (src.height, src.width) == (dst.height, dst.width) {
        1
    } else {
        (2..=8)
            .find(|&s| src.height.div_ceil(s) == dst.height && src.width.div_ceil(s) == dst.width)
            .ok_or_else(|| MorphError::ShapeRepairFailure(format!("skip from {src} to {dst}")))?
    };

    let consumers = graph.successors(to);
    let mut next = graph.next_id();
    let shortcut = if stride == 1 && src.channels == dst.channels {
        Source::Node(from.id)
    } else {
        let id = next;
        next = NodeId(next.0 + 1);
        graph.nodes_mut().push(Node { id, layer: Layer::conv(1, stride, dst.channels), inputs: vec![Source::Node(from.id)] });
        Source::Node(id)
    };
    let add = next;
    graph.nodes_mut().push(Node { id: add, layer: Layer::Add, inputs: vec![Source::Node(to), shortcut] });
    for c in consumers {
        let node = graph.node_mut(c).expect("consumer exists");
        for s in node.inputs.iter_mut() {
            if *s == Source::Node(to) {
                *s = Source::Node(add);
            }
        }
    }
    Ok(())
}

/// A random action that targets an eligible node of `graph`, or `None` when
/// no node qualifies for the drawn kind. The action may still be rejected by
/// [`apply_morph`].
pub fn random_action<R: Rng>(graph: &ArchitectureGraph, rng: &mut R) -> Option<MorphAction> {
    let kind = MorphKind::ALL[rng.random_range(0..MorphKind::ALL.len())];
    let eligible: Vec<&Node> = graph
        .nodes()
        .iter()
        .filter(|n| match kind {
            MorphKind::DeepenBlock | MorphKind::AddSkip => is_feature_map(&n.layer),
            MorphKind::Widen | MorphKind::ChangeKernel => n.layer.kind() == LayerKind::Convolution,
        })
        .collect();
    if eligible.is_empty() {
        return None;
    }
    let target = eligible[rng.random_range(0..eligible.len())];
    let action = match kind {
        MorphKind::DeepenBlock => MorphAction::deepen(target.id, KERNEL_MENU[rng.random_range(0..KERNEL_MENU.len())]),
        MorphKind::Widen => MorphAction::widen(target.id),
        MorphKind::ChangeKernel => {
            let Layer::Convolution { kernel, .. } = target.layer else { unreachable!() };
            let options: Vec<u32> = KERNEL_MENU.iter().copied().filter(|&k| k != kernel).collect();
            MorphAction::change_kernel(target.id, options[rng.random_range(0..options.len())])
        }
        MorphKind::AddSkip => MorphAction::add_skip(target.id, rng.random_range(1..=4)),
    };
    Some(action)
}

/// Applies `steps` random actions. Returns `None` if any step fails.
pub fn random_morph<R: Rng>(graph: &ArchitectureGraph, steps: usize, rng: &mut R) -> Option<(ArchitectureGraph, Vec<MorphAction>)> {
    let mut g = graph.clone();
    let mut actions = Vec::with_capacity(steps);
    for _ in 0..steps {
        let action = random_action(&g, rng)?;
        g = apply_morph(&g, action).ok()?;
        actions.push(action);
    }
    Some((g, actions))
}

/// `n` distinct children of the best architecture in `history` (or of
/// `base` when the history is empty), none of which is already in the
/// history.
pub fn propose_candidates(
    history: &[HistoryRecord],
    base: &ArchitectureGraph,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<ArchitectureGraph>, MorphError> {
    propose_candidates_excluding(history, base, n, rng_seed, &HashSet::new(), DEFAULT_MAX_ATTEMPTS)
}

/// [`propose_candidates`] that also avoids the digests in `exclude`, e.g.
/// candidates already waiting in the buffer.
pub fn propose_candidates_excluding(
    history: &[HistoryRecord],
    base: &ArchitectureGraph,
    n: usize,
    rng_seed: u64,
    exclude: &HashSet<String>,
    max_attempts: usize,
) -> Result<Vec<ArchitectureGraph>, MorphError> {
    if n == 0 {
        return Err(MorphError::InapplicableAction("candidate count must be positive".into()));
    }
    let parent = best_record(history).map(|r| r.architecture.as_ref()).unwrap_or(base);
    let parent_digest = parent.digest();
    let mut rng = seed::rng(rng_seed, &[seed::hash_str(&parent_digest), history.len() as u64]);

    let mut seen: HashSet<String> = history.iter().map(|r| r.digest.clone()).collect();
    seen.extend(exclude.iter().cloned());
    seen.insert(parent_digest);

    let mut out = Vec::with_capacity(n);
    for _ in 0..max_attempts {
        let steps = rng.random_range(1..=3);
        let Some((child, _)) = random_morph(parent, steps, &mut rng) else { continue };
        if seen.insert(child.digest()) {
            out.push(child);
            if out.len() == n {
                return Ok(out);
            }
        }
    }
    Err(MorphError::ExhaustedSearch { found: out.len(), wanted: n, attempts: max_attempts })
}

/// Coarse structural summary used to compare architectures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchFeatures {
    pub nodes: f64,
    pub parameters: f64,
    /// Convolution counts for kernel sizes 1, 3, 5 and 7.
    pub kernels: [f64; 4],
}

impl ArchFeatures {
    pub fn of(graph: &ArchitectureGraph) -> Result<Self, GraphError> {
        let mut kernels = [0.0; 4];
        for node in graph.nodes() {
            if let Layer::Convolution { kernel, .. } = node.layer {
                if let Some(i) = KERNEL_MENU.iter().position(|&k| k == kernel) {
                    kernels[i] += 1.0;
                }
            }
        }
        Ok(ArchFeatures { nodes: graph.len() as f64, parameters: graph.parameter_count()? as f64, kernels })
    }

    /// `|Δnodes| + |Δparams| / max(params) + 0.5 · L1(kernel histograms)`.
    pub fn distance(&self, other: &ArchFeatures) -> f64 {
        let dn = (self.nodes - other.nodes).abs();
        let scale = self.parameters.max(other.parameters);
        let dp = if scale > 0.0 { (self.parameters - other.parameters).abs() / scale } else { 0.0 };
        let dk: f64 = self.kernels.iter().zip(&other.kernels).map(|(a, b)| (a - b).abs()).sum();
        dn + dp + 0.5 * dk
    }
}

/// Surrogate prediction of a candidate's error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surrogate {
    pub mean: f64,
    pub std_dev: f64,
}

/// Inverse-square-distance regression over the history. An exact match
/// returns that record's error with zero spread; otherwise the spread is the
/// weighted deviation of the errors, shrunk toward zero near known points.
pub fn surrogate(history: &[(ArchFeatures, f64)], candidate: &ArchFeatures) -> Option<Surrogate> {
    if history.is_empty() {
        return None;
    }
    let dists: Vec<f64> = history.iter().map(|(f, _)| f.distance(candidate)).collect();
    let exact: Vec<f64> = history.iter().zip(&dists).filter(|(_, &d)| d == 0.0).map(|((_, e), _)| *e).collect();
    if !exact.is_empty() {
        let mean = exact.iter().sum::<f64>() / exact.len() as f64;
        return Some(Surrogate { mean, std_dev: 0.0 });
    }
    let weights: Vec<f64> = dists.iter().map(|d| 1.0 / (d * d)).collect();
    let total: f64 = weights.iter().sum();
    let mean = history.iter().zip(&weights).map(|((_, e), w)| w * e).sum::<f64>() / total;
    let var = history.iter().zip(&weights).map(|((_, e), w)| w * (e - mean).powi(2)).sum::<f64>() / total;
    let nearest = dists.iter().copied().fold(f64::INFINITY, f64::min);
    Some(Surrogate { mean, std_dev: var.sqrt() * (1.0 - (-nearest).exp()) })
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement over the best error in the history, for minimisation.
pub fn expected_improvement(best: f64, s: Surrogate) -> f64 {
    if s.std_dev <= 0.0 {
        return (best - s.mean).max(0.0);
    }
    let z = (best - s.mean) / s.std_dev;
    (best - s.mean) * normal_cdf(z) + s.std_dev * normal_pdf(z)
}

/// Higher is more promising. Zero for every candidate when history is empty.
pub fn acquisition_score(history: &[HistoryRecord], candidate: &ArchitectureGraph) -> Result<f64, GraphError> {
    if history.is_empty() {
        return Ok(0.0);
    }
    let points = history
        .iter()
        .map(|r| Ok((ArchFeatures::of(&r.architecture)?, r.best_error)))
        .collect::<Result<Vec<_>, GraphError>>()?;
    let best = history.iter().map(|r| r.best_error).fold(f64::INFINITY, f64::min);
    let s = surrogate(&points, &ArchFeatures::of(candidate)?).expect("history is non-empty");
    Ok(expected_improvement(best, s))
}
