//! Symbolic layer graphs.
//!
//! An [`ArchitectureGraph`] is a DAG of typed layers hanging off a single
//! image input. There are no weights here: the graph exists so that tensor
//! shapes, parameter counts and operation counts can be derived from it.
//!
//! Graphs round-trip through a line-oriented text format:
//!
//! ```text
//! input 224x224x3
//! 0 Convolution k=7 s=2 c=64 <- input
//! 1 BatchNorm <- 0
//! 2 ReLU <- 1
//! ```
//!
//! Predecessors must be declared on an earlier line, so every parsed file is
//! acyclic by construction.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("invalid tensor shape `{0}`")]
    InvalidShape(String),
    #[error("node {0}: unknown predecessor {1}")]
    UnknownPredecessor(NodeId, NodeId),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("node {0} has {1} inputs, expected {2}")]
    Arity(NodeId, usize, usize),
    #[error("graph contains a cycle through node {0}")]
    Cycle(NodeId),
    #[error("node {0} is not connected to the input")]
    DanglingNode(NodeId),
    #[error("graph must have exactly one sink, found {0}")]
    SinkCount(usize),
    #[error("sink node {0} is not a Softmax")]
    SinkNotSoftmax(NodeId),
    #[error("graph has no nodes")]
    Empty,
    #[error("add node {node}: branch shapes {left} and {right} differ")]
    ShapeMismatch {
        node: NodeId,
        left: TensorShape,
        right: TensorShape,
    },
    #[error("node {node}: {kind:?} cannot consume a flattened {shape} tensor")]
    KindShape {
        node: NodeId,
        kind: LayerKind,
        shape: TensorShape,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Height × width × channels of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorShape {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

impl TensorShape {
    pub fn new(height: u32, width: u32, channels: u32) -> Result<Self, GraphError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(GraphError::InvalidShape(format!("{height}x{width}x{channels}")));
        }
        Ok(TensorShape { height, width, channels })
    }

    /// Total element count, `H·W·C`.
    pub fn volume(&self) -> u128 {
        self.height as u128 * self.width as u128 * self.channels as u128
    }

    pub fn spatial(&self) -> u128 {
        self.height as u128 * self.width as u128
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

impl FromStr for TensorShape {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dims: Vec<&str> = s.trim().split('x').collect();
        if dims.len() != 3 {
            return Err(GraphError::InvalidShape(s.to_string()));
        }
        let parse = |d: &str| d.parse::<u32>().map_err(|_| GraphError::InvalidShape(s.to_string()));
        TensorShape::new(parse(dims[0])?, parse(dims[1])?, parse(dims[2])?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Convolution,
    Dense,
    BatchNorm,
    ReLU,
    Add,
    MaxPool,
    GlobalAvgPool,
    Softmax,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::Convolution,
        LayerKind::Dense,
        LayerKind::BatchNorm,
        LayerKind::ReLU,
        LayerKind::MaxPool,
        LayerKind::GlobalAvgPool,
        LayerKind::Add,
        LayerKind::Softmax,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Convolution => "Convolution",
            LayerKind::Dense => "Dense",
            LayerKind::BatchNorm => "BatchNorm",
            LayerKind::ReLU => "ReLU",
            LayerKind::Add => "Add",
            LayerKind::MaxPool => "MaxPool",
            LayerKind::GlobalAvgPool => "GlobalAvgPool",
            LayerKind::Softmax => "Softmax",
        }
    }
}

impl FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LayerKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unsupported layer kind `{s}`"))
    }
}

/// A layer and its static configuration.
///
/// Convolution and max-pooling use "same" padding: the output spatial size is
/// `ceil(input / stride)`. Convolutions carry no bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    Convolution { kernel: u32, stride: u32, out_channels: u32 },
    Dense { out_channels: u32, bias: bool },
    BatchNorm,
    ReLU,
    Add,
    MaxPool { kernel: u32, stride: u32 },
    GlobalAvgPool,
    Softmax,
}

impl Layer {
    pub fn conv(kernel: u32, stride: u32, out_channels: u32) -> Layer {
        Layer::Convolution { kernel, stride, out_channels }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Convolution { .. } => LayerKind::Convolution,
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::BatchNorm => LayerKind::BatchNorm,
            Layer::ReLU => LayerKind::ReLU,
            Layer::Add => LayerKind::Add,
            Layer::MaxPool { .. } => LayerKind::MaxPool,
            Layer::GlobalAvgPool => LayerKind::GlobalAvgPool,
            Layer::Softmax => LayerKind::Softmax,
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Layer::Add => 2,
            _ => 1,
        }
    }

    /// Layers that own trainable parameters.
    pub fn is_parameterized(&self) -> bool {
        matches!(self, Layer::Convolution { .. } | Layer::Dense { .. } | Layer::BatchNorm)
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            Layer::Convolution { kernel, stride, out_channels } => {
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err("convolution needs positive k, s and c".into());
                }
            }
            Layer::MaxPool { kernel, stride } => {
                if kernel == 0 || stride == 0 {
                    return Err("max-pool needs positive k and s".into());
                }
            }
            Layer::Dense { out_channels: 0, .. } => return Err("dense needs positive c".into()),
            _ => {}
        }
        Ok(())
    }

    /// Output shape for a given input, or `None` when the layer cannot take it.
    fn output_shape(&self, input: TensorShape) -> Option<TensorShape> {
        let down = |x: u32, s: u32| x.div_ceil(s);
        match *self {
            Layer::Convolution { stride, out_channels, .. } => Some(TensorShape {
                height: down(input.height, stride),
                width: down(input.width, stride),
                channels: out_channels,
            }),
            Layer::MaxPool { stride, .. } => Some(TensorShape {
                height: down(input.height, stride),
                width: down(input.width, stride),
                channels: input.channels,
            }),
            Layer::Dense { out_channels, .. } => Some(TensorShape { height: 1, width: 1, channels: out_channels }),
            Layer::BatchNorm | Layer::ReLU | Layer::Add => Some(input),
            Layer::GlobalAvgPool => Some(TensorShape { height: 1, width: 1, channels: input.channels }),
            Layer::Softmax => {
                let width = u32::try_from(input.volume()).ok()?;
                Some(TensorShape { height: 1, width: 1, channels: width })
            }
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind().name())?;
        match *self {
            Layer::Convolution { kernel, stride, out_channels } => {
                write!(f, " k={kernel} s={stride} c={out_channels}")
            }
            Layer::MaxPool { kernel, stride } => write!(f, " k={kernel} s={stride}"),
            Layer::Dense { out_channels, bias } => write!(f, " c={out_channels} bias={}", u8::from(bias)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a node reads its data from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Input,
    Node(NodeId),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Input => f.write_str("input"),
            Source::Node(id) => write!(f, "{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub id: NodeId,
    pub layer: Layer,
    pub inputs: Vec<Source>,
}

/// Input and output shape of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeShapes {
    pub input: TensorShape,
    pub output: TensorShape,
}

pub type ShapeMap = BTreeMap<NodeId, NodeShapes>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureGraph {
    input_shape: TensorShape,
    nodes: Vec<Node>,
}

impl ArchitectureGraph {
    /// Builds and validates a graph.
    pub fn new(input_shape: TensorShape, nodes: Vec<Node>) -> Result<Self, GraphError> {
        let graph = ArchitectureGraph { input_shape, nodes };
        graph.validate()?;
        Ok(graph)
    }

    pub fn input_shape(&self) -> TensorShape {
        self.input_shape
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut Vec<Node> {
        &mut self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn next_id(&self) -> NodeId {
        NodeId(self.nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0))
    }

    /// Nodes that read from `id`, in id order.
    pub fn successors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.inputs.contains(&Source::Node(id)))
            .map(|n| n.id)
            .collect();
        out.sort();
        out
    }

    /// The unique Softmax output.
    pub fn sink(&self) -> Option<&Node> {
        let consumed: BTreeSet<NodeId> = self
            .nodes
            .iter()
            .flat_map(|n| n.inputs.iter())
            .filter_map(|s| match s {
                Source::Node(id) => Some(*id),
                Source::Input => None,
            })
            .collect();
        let mut sinks = self.nodes.iter().filter(|n| !consumed.contains(&n.id));
        let first = sinks.next()?;
        sinks.next().is_none().then_some(first)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut ids = BTreeSet::new();
        for node in &self.nodes {
            if !ids.insert(node.id) {
                return Err(GraphError::DuplicateNode(node.id));
            }
        }
        for node in &self.nodes {
            node.layer
                .validate()
                .map_err(|msg| GraphError::InvalidInput(format!("node {}: {msg}", node.id)))?;
            if node.inputs.is_empty() {
                return Err(GraphError::DanglingNode(node.id));
            }
            if node.inputs.len() != node.layer.arity() {
                return Err(GraphError::Arity(node.id, node.inputs.len(), node.layer.arity()));
            }
            for src in &node.inputs {
                if let Source::Node(p) = src {
                    if !ids.contains(p) {
                        return Err(GraphError::UnknownPredecessor(node.id, *p));
                    }
                }
            }
        }
        self.topological_order()?;

        let consumed: BTreeSet<NodeId> = self
            .nodes
            .iter()
            .flat_map(|n| n.inputs.iter())
            .filter_map(|s| match s {
                Source::Node(id) => Some(*id),
                Source::Input => None,
            })
            .collect();
        let sinks: Vec<&Node> = self.nodes.iter().filter(|n| !consumed.contains(&n.id)).collect();
        if sinks.len() != 1 {
            return Err(GraphError::SinkCount(sinks.len()));
        }
        if sinks[0].layer != Layer::Softmax {
            return Err(GraphError::SinkNotSoftmax(sinks[0].id));
        }
        Ok(())
    }

    /// Kahn's algorithm; ready nodes are released lowest id first.
    pub fn topological_order(&self) -> Result<Vec<NodeId>, GraphError> {
        let mut indegree: HashMap<NodeId, usize> = HashMap::new();
        let mut children: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        let mut ready = BinaryHeap::new();
        for node in &self.nodes {
            let deps = node.inputs.iter().filter(|s| matches!(s, Source::Node(_))).count();
            indegree.insert(node.id, deps);
            if deps == 0 {
                ready.push(Reverse(node.id));
            }
            for src in &node.inputs {
                if let Source::Node(p) = src {
                    children.entry(*p).or_default().push(node.id);
                }
            }
        }
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(id)) = ready.pop() {
            order.push(id);
            for child in children.get(&id).into_iter().flatten() {
                let d = indegree.get_mut(child).expect("child registered");
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(*child));
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = self
                .nodes
                .iter()
                .map(|n| n.id)
                .find(|id| !order.contains(id))
                .expect("some node left over");
            return Err(GraphError::Cycle(stuck));
        }
        Ok(order)
    }

    /// Nodes sorted topologically.
    pub fn ordered_nodes(&self) -> Result<Vec<&Node>, GraphError> {
        let index: HashMap<NodeId, &Node> = self.nodes.iter().map(|n| (n.id, n)).collect();
        Ok(self.topological_order()?.into_iter().map(|id| index[&id]).collect())
    }

    /// Input and output shape of every node.
    pub fn infer_shapes(&self) -> Result<ShapeMap, GraphError> {
        self.validate()?;
        let mut shapes = ShapeMap::new();
        for node in self.ordered_nodes()? {
            let src_shape = |s: &Source| match s {
                Source::Input => self.input_shape,
                Source::Node(p) => shapes[p].output,
            };
            let input = src_shape(&node.inputs[0]);
            if node.layer == Layer::Add {
                let right = src_shape(&node.inputs[1]);
                if input != right {
                    return Err(GraphError::ShapeMismatch { node: node.id, left: input, right });
                }
            }
            if matches!(node.layer, Layer::Convolution { .. } | Layer::MaxPool { .. })
                && input.height == 1
                && input.width == 1
                && self.flattened_upstream(node)
            {
                return Err(GraphError::KindShape { node: node.id, kind: node.layer.kind(), shape: input });
            }
            let output = node.layer.output_shape(input).ok_or(GraphError::KindShape {
                node: node.id,
                kind: node.layer.kind(),
                shape: input,
            })?;
            shapes.insert(node.id, NodeShapes { input, output });
        }
        Ok(shapes)
    }

    // Spatial layers may not follow a Dense/GlobalAvgPool/Softmax.
    fn flattened_upstream(&self, node: &Node) -> bool {
        node.inputs.iter().any(|s| match s {
            Source::Input => false,
            Source::Node(p) => matches!(
                self.node(*p).map(|n| n.layer),
                Some(Layer::Dense { .. } | Layer::GlobalAvgPool | Layer::Softmax)
            ),
        })
    }

    /// Trainable parameter count.
    ///
    /// Convolutions contribute `K·K·C_i·C_o`, dense layers `(C_i + 1)·C_o`
    /// (or `C_i·C_o` without bias) and batch norms `2·C_i`.
    pub fn parameter_count(&self) -> Result<u64, GraphError> {
        let shapes = self.infer_shapes()?;
        Ok(self
            .nodes
            .iter()
            .map(|n| layer_parameters(&n.layer, shapes[&n.id].input))
            .sum())
    }

    /// Width of the softmax output.
    pub fn output_width(&self) -> Result<u32, GraphError> {
        let shapes = self.infer_shapes()?;
        let sink = self.sink().ok_or(GraphError::SinkCount(0))?;
        Ok(shapes[&sink.id].output.channels)
    }

    /// Serialization with nodes in topological order and ids relabelled
    /// by position. Two graphs that differ only in node numbering map to the
    /// same text.
    pub fn canonical_text(&self) -> Result<String, GraphError> {
        let order = self.ordered_nodes()?;
        let position: HashMap<NodeId, usize> = order.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut out = format!("input {}\n", self.input_shape);
        for (i, node) in order.iter().enumerate() {
            let preds: Vec<String> = node
                .inputs
                .iter()
                .map(|s| match s {
                    Source::Input => "input".to_string(),
                    Source::Node(p) => position[p].to_string(),
                })
                .collect();
            out.push_str(&format!("{i} {} <- {}\n", node.layer, preds.join(",")));
        }
        Ok(out)
    }

    /// Content hash of [`canonical_text`](Self::canonical_text), 16 hex digits.
    pub fn digest(&self) -> String {
        let text = self.canonical_text().unwrap_or_else(|_| self.to_string());
        let hash = Sha256::digest(text.as_bytes());
        hex::encode(&hash[..8])
    }
}

pub(crate) fn layer_parameters(layer: &Layer, input: TensorShape) -> u64 {
    let ci = input.channels as u64;
    match *layer {
        Layer::Convolution { kernel, out_channels, .. } => {
            let k = kernel as u64;
            k * k * ci * out_channels as u64
        }
        Layer::Dense { out_channels, bias } => {
            let fan_in = input.volume() as u64;
            (fan_in + u64::from(bias)) * out_channels as u64
        }
        Layer::BatchNorm => 2 * ci,
        _ => 0,
    }
}

impl fmt::Display for ArchitectureGraph {
    /// Writes nodes in topological order, keeping their ids.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input {}", self.input_shape)?;
        let nodes: Vec<&Node> = match self.ordered_nodes() {
            Ok(nodes) => nodes,
            Err(_) => self.nodes.iter().collect(),
        };
        for node in nodes {
            let preds: Vec<String> = node.inputs.iter().map(|s| s.to_string()).collect();
            writeln!(f, "{} {} <- {}", node.id, node.layer, preds.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for ArchitectureGraph {
    type Err = GraphError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (line_no, header) = lines.next().ok_or(GraphError::Parse { line: 1, msg: "missing input header".into() })?;
        let shape_text = header
            .strip_prefix("input ")
            .ok_or(GraphError::Parse { line: line_no, msg: "expected `input HxWxC`".into() })?;
        let input_shape: TensorShape = shape_text
            .parse()
            .map_err(|e: GraphError| GraphError::Parse { line: line_no, msg: e.to_string() })?;

        let mut nodes = Vec::new();
        let mut seen = BTreeSet::new();
        for (line, content) in lines {
            let err = |msg: String| GraphError::Parse { line, msg };
            let (lhs, rhs) = content.split_once("<-").ok_or_else(|| err("missing `<-`".into()))?;
            let mut tokens = lhs.split_whitespace();
            let id: u32 = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err("expected numeric node id".into()))?;
            let kind: LayerKind = tokens
                .next()
                .ok_or_else(|| err("missing layer kind".into()))?
                .parse()
                .map_err(err)?;

            let mut attrs: HashMap<&str, u32> = HashMap::new();
            for tok in tokens {
                let (key, value) = tok.split_once('=').ok_or_else(|| err(format!("bad attribute `{tok}`")))?;
                if !matches!(key, "k" | "s" | "c" | "bias") {
                    return Err(err(format!("unknown attribute `{key}`")));
                }
                let value: u32 = value.parse().map_err(|_| err(format!("bad value in `{tok}`")))?;
                if attrs.insert(key, value).is_some() {
                    return Err(err(format!("repeated attribute `{key}`")));
                }
            }
            let allowed: &[&str] = match kind {
                LayerKind::Convolution => &["k", "s", "c"],
                LayerKind::MaxPool => &["k", "s"],
                LayerKind::Dense => &["c", "bias"],
                _ => &[],
            };
            if let Some(extra) = attrs.keys().find(|k| !allowed.contains(k)) {
                return Err(err(format!("attribute `{extra}` not valid for {}", kind.name())));
            }
            let need = |key: &str| attrs.get(key).copied().ok_or_else(|| err(format!("{} needs `{key}=`", kind.name())));
            let layer = match kind {
                LayerKind::Convolution => Layer::Convolution { kernel: need("k")?, stride: need("s")?, out_channels: need("c")? },
                LayerKind::MaxPool => Layer::MaxPool { kernel: need("k")?, stride: need("s")? },
                LayerKind::Dense => Layer::Dense {
                    out_channels: need("c")?,
                    bias: match attrs.get("bias").copied().unwrap_or(1) {
                        0 => false,
                        1 => true,
                        _ => return Err(err("bias must be 0 or 1".into())),
                    },
                },
                LayerKind::BatchNorm => Layer::BatchNorm,
                LayerKind::ReLU => Layer::ReLU,
                LayerKind::Add => Layer::Add,
                LayerKind::GlobalAvgPool => Layer::GlobalAvgPool,
                LayerKind::Softmax => Layer::Softmax,
            };

            let mut inputs = Vec::new();
            for pred in rhs.split(',').map(str::trim) {
                let src = if pred == "input" {
                    Source::Input
                } else {
                    let p = NodeId(pred.parse().map_err(|_| err(format!("bad predecessor `{pred}`")))?);
                    if !seen.contains(&p) {
                        return Err(err(format!("predecessor {p} is not declared above")));
                    }
                    Source::Node(p)
                };
                inputs.push(src);
            }
            let id = NodeId(id);
            if !seen.insert(id) {
                return Err(err(format!("duplicate node id {id}")));
            }
            nodes.push(Node { id, layer, inputs });
        }
        ArchitectureGraph::new(input_shape, nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(h: u32, w: u32, c: u32) -> TensorShape {
        TensorShape::new(h, w, c).unwrap()
    }

    fn chain(input: TensorShape, layers: &[Layer]) -> ArchitectureGraph {
        let nodes = layers
            .iter()
            .enumerate()
            .map(|(i, layer)| Node {
                id: NodeId(i as u32),
                layer: *layer,
                inputs: vec![if i == 0 { Source::Input } else { Source::Node(NodeId(i as u32 - 1)) }],
            })
            .collect();
        ArchitectureGraph::new(input, nodes).unwrap()
    }

    #[test]
    fn pointwise_conv_keeps_shape() {
        let g = chain(shape(224, 224, 3), &[Layer::conv(1, 1, 3), Layer::Softmax]);
        let shapes = g.infer_shapes().unwrap();
        assert_eq!(shapes[&NodeId(0)].output, shape(224, 224, 3));
    }

    #[test]
    fn strided_conv_uses_ceil_division() {
        let g = chain(shape(224, 224, 3), &[Layer::conv(7, 2, 64), Layer::Softmax]);
        assert_eq!(g.infer_shapes().unwrap()[&NodeId(0)].output, shape(112, 112, 64));
        let g = chain(shape(7, 5, 3), &[Layer::conv(3, 2, 8), Layer::Softmax]);
        assert_eq!(g.infer_shapes().unwrap()[&NodeId(0)].output, shape(4, 3, 8));
    }

    #[test]
    fn global_pool_collapses_spatial() {
        let g = chain(shape(7, 7, 2048), &[Layer::GlobalAvgPool, Layer::Softmax]);
        let shapes = g.infer_shapes().unwrap();
        assert_eq!(shapes[&NodeId(0)].output, shape(1, 1, 2048));
        assert_eq!(shapes[&NodeId(1)].output, shape(1, 1, 2048));
    }

    #[test]
    fn add_with_mismatched_branches_is_rejected() {
        let nodes = vec![
            Node { id: NodeId(0), layer: Layer::conv(1, 1, 8), inputs: vec![Source::Input] },
            Node { id: NodeId(1), layer: Layer::conv(1, 1, 4), inputs: vec![Source::Input] },
            Node { id: NodeId(2), layer: Layer::Add, inputs: vec![Source::Node(NodeId(0)), Source::Node(NodeId(1))] },
            Node { id: NodeId(3), layer: Layer::Softmax, inputs: vec![Source::Node(NodeId(2))] },
        ];
        let g = ArchitectureGraph::new(shape(8, 8, 3), nodes).unwrap();
        assert!(matches!(g.infer_shapes(), Err(GraphError::ShapeMismatch { node: NodeId(2), .. })));
    }

    #[test]
    fn node_without_inputs_is_dangling() {
        let nodes = vec![
            Node { id: NodeId(0), layer: Layer::ReLU, inputs: vec![] },
            Node { id: NodeId(1), layer: Layer::Softmax, inputs: vec![Source::Input] },
        ];
        assert_eq!(ArchitectureGraph::new(shape(1, 1, 1), nodes), Err(GraphError::DanglingNode(NodeId(0))));
    }

    #[test]
    fn two_sinks_rejected() {
        let nodes = vec![
            Node { id: NodeId(0), layer: Layer::ReLU, inputs: vec![Source::Input] },
            Node { id: NodeId(1), layer: Layer::Softmax, inputs: vec![Source::Input] },
        ];
        assert_eq!(ArchitectureGraph::new(shape(1, 1, 1), nodes), Err(GraphError::SinkCount(2)));
    }

    #[test]
    fn cycle_rejected() {
        let nodes = vec![
            Node { id: NodeId(0), layer: Layer::Add, inputs: vec![Source::Input, Source::Node(NodeId(1))] },
            Node { id: NodeId(1), layer: Layer::ReLU, inputs: vec![Source::Node(NodeId(0))] },
            Node { id: NodeId(2), layer: Layer::Softmax, inputs: vec![Source::Node(NodeId(1))] },
        ];
        assert!(matches!(ArchitectureGraph::new(shape(1, 1, 1), nodes), Err(GraphError::Cycle(_))));
    }

    #[test]
    fn parameter_counts() {
        let dense = chain(shape(1, 1, 2048), &[Layer::Dense { out_channels: 1000, bias: true }, Layer::Softmax]);
        assert_eq!(dense.parameter_count().unwrap(), 2_049_000);
        let conv = chain(shape(5, 5, 1), &[Layer::conv(3, 1, 1), Layer::Softmax]);
        assert_eq!(conv.parameter_count().unwrap(), 9);
        let bn = chain(shape(5, 5, 16), &[Layer::BatchNorm, Layer::Softmax]);
        assert_eq!(bn.parameter_count().unwrap(), 32);
    }

    #[test]
    fn text_round_trip_and_digest() {
        let g = chain(shape(32, 32, 3), &[Layer::conv(3, 2, 16), Layer::BatchNorm, Layer::ReLU, Layer::GlobalAvgPool, Layer::Dense { out_channels: 10, bias: true }, Layer::Softmax]);
        let text = g.to_string();
        let back: ArchitectureGraph = text.parse().unwrap();
        assert_eq!(back, g);
        assert_eq!(back.digest(), g.digest());

        let longer = chain(shape(32, 32, 3), &[Layer::conv(3, 2, 16), Layer::BatchNorm, Layer::ReLU, Layer::ReLU, Layer::GlobalAvgPool, Layer::Dense { out_channels: 10, bias: true }, Layer::Softmax]);
        assert_ne!(longer.digest(), g.digest());
    }

    #[test]
    fn digest_ignores_node_numbering() {
        let a = chain(shape(8, 8, 3), &[Layer::ReLU, Layer::Softmax]);
        let b = ArchitectureGraph::new(
            shape(8, 8, 3),
            vec![
                Node { id: NodeId(40), layer: Layer::Softmax, inputs: vec![Source::Node(NodeId(7))] },
                Node { id: NodeId(7), layer: Layer::ReLU, inputs: vec![Source::Input] },
            ],
        )
        .unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "input 8x8x3\n0 Convolution k=3 c=4 <- input\n1 Softmax <- 0\n";
        assert!(matches!(bad.parse::<ArchitectureGraph>(), Err(GraphError::Parse { line: 2, .. })));
        let unknown = "input 8x8x3\n0 Dropout <- input\n";
        assert!(matches!(unknown.parse::<ArchitectureGraph>(), Err(GraphError::Parse { line: 2, .. })));
        let forward = "input 8x8x3\n0 ReLU <- 1\n1 Softmax <- 0\n";
        assert!(matches!(forward.parse::<ArchitectureGraph>(), Err(GraphError::Parse { line: 2, .. })));
    }

    #[test]
    fn conv_after_dense_is_rejected() {
        let g = chain(shape(4, 4, 3), &[Layer::Dense { out_channels: 8, bias: true }, Layer::conv(1, 1, 4), Layer::Softmax]);
        assert!(matches!(g.infer_shapes(), Err(GraphError::KindShape { .. })));
    }
}
