//! Analytical operation counts for training and validation.
//!
//! Counts are per image and split by operation class. A class is turned into
//! a scalar through [`OpWeights`]: a multiply-accumulate is worth 2, an
//! add/subtract/multiply/compare 1, a divide or square root 4 and a
//! transcendental such as `exp` 8.
//!
//! The backward pass follows the usual gradient rules: a convolution or dense
//! layer pays twice its forward MACCs (weight gradient plus data gradient)
//! plus one MACC per parameter for the update. Every other layer's backward
//! cost is treated as negligible and counted as zero. A parameterized layer
//! with no trainable ancestor skips the data-gradient term because nothing
//! upstream consumes it.

use std::collections::{BTreeMap, HashMap};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul};

use crate::graph::{ArchitectureGraph, GraphError, Layer, LayerKind, NodeId, Source, TensorShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpWeights {
    pub macc: u128,
    pub add_sub_mul_cmp: u128,
    pub div_sqrt: u128,
    pub special: u128,
}

impl Default for OpWeights {
    fn default() -> Self {
        OpWeights { macc: 2, add_sub_mul_cmp: 1, div_sqrt: 4, special: 8 }
    }
}

/// Tallies of each operation class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct OpCount {
    pub macc: u128,
    pub add: u128,
    pub div: u128,
    pub comparison: u128,
    pub exp: u128,
}

impl OpCount {
    pub const ZERO: OpCount = OpCount { macc: 0, add: 0, div: 0, comparison: 0, exp: 0 };

    pub fn weighted(&self, w: &OpWeights) -> u128 {
        w.macc * self.macc + w.add_sub_mul_cmp * (self.add + self.comparison) + w.div_sqrt * self.div + w.special * self.exp
    }

    /// Weighted total under the default weights.
    pub fn weighted_total(&self) -> u128 {
        self.weighted(&OpWeights::default())
    }

    pub fn is_zero(&self) -> bool {
        *self == OpCount::ZERO
    }
}

impl Add for OpCount {
    type Output = OpCount;

    fn add(self, rhs: OpCount) -> OpCount {
        OpCount {
            macc: self.macc + rhs.macc,
            add: self.add + rhs.add,
            div: self.div + rhs.div,
            comparison: self.comparison + rhs.comparison,
            exp: self.exp + rhs.exp,
        }
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, rhs: OpCount) {
        *self = *self + rhs;
    }
}

impl Mul<u128> for OpCount {
    type Output = OpCount;

    fn mul(self, k: u128) -> OpCount {
        OpCount {
            macc: self.macc * k,
            add: self.add * k,
            div: self.div * k,
            comparison: self.comparison * k,
            exp: self.exp * k,
        }
    }
}

impl Sum for OpCount {
    fn sum<I: Iterator<Item = OpCount>>(iter: I) -> OpCount {
        iter.fold(OpCount::ZERO, Add::add)
    }
}

/// Image counts and resolution of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetDescriptor {
    train_images: u64,
    val_images: u64,
    image_shape: TensorShape,
}

impl DatasetDescriptor {
    pub const IMAGENET_TRAIN: u64 = 1_281_167;
    pub const IMAGENET_VAL: u64 = 50_000;

    pub fn new(train_images: u64, val_images: u64, image_shape: TensorShape) -> Result<Self, GraphError> {
        if train_images == 0 || val_images == 0 {
            return Err(GraphError::InvalidInput("dataset image counts must be positive".into()));
        }
        Ok(DatasetDescriptor { train_images, val_images, image_shape })
    }

    pub fn imagenet() -> Self {
        DatasetDescriptor {
            train_images: Self::IMAGENET_TRAIN,
            val_images: Self::IMAGENET_VAL,
            image_shape: TensorShape { height: 224, width: 224, channels: 3 },
        }
    }

    pub fn train_images(&self) -> u64 {
        self.train_images
    }

    pub fn val_images(&self) -> u64 {
        self.val_images
    }

    pub fn image_shape(&self) -> TensorShape {
        self.image_shape
    }

    pub fn is_imagenet(&self) -> bool {
        *self == Self::imagenet()
    }
}

/// Forward-pass counts for one layer and one image.
pub fn count_layer_fp(layer: &Layer, input: TensorShape, output: TensorShape) -> OpCount {
    let in_vol = input.volume();
    let out_vol = output.volume();
    let ci = input.channels as u128;
    match *layer {
        Layer::Convolution { kernel, .. } => {
            let k = kernel as u128;
            OpCount { macc: k * k * ci * out_vol, ..OpCount::ZERO }
        }
        Layer::Dense { .. } => OpCount { macc: in_vol * output.channels as u128, ..OpCount::ZERO },
        Layer::BatchNorm => OpCount { macc: in_vol, add: in_vol, div: in_vol, ..OpCount::ZERO },
        Layer::ReLU => OpCount { comparison: out_vol, ..OpCount::ZERO },
        Layer::Add => OpCount { add: out_vol, ..OpCount::ZERO },
        Layer::MaxPool { kernel, .. } => {
            let k = kernel as u128;
            OpCount { comparison: k * k * out_vol, ..OpCount::ZERO }
        }
        Layer::GlobalAvgPool => OpCount { add: in_vol, div: ci, ..OpCount::ZERO },
        Layer::Softmax => {
            let co = output.channels as u128;
            OpCount { exp: co, add: co, div: co, ..OpCount::ZERO }
        }
    }
}

/// Backward-pass counts for one layer and one image, including the
/// parameter update.
pub fn count_layer_bp(layer: &Layer, input: TensorShape, output: TensorShape) -> OpCount {
    count_layer_bp_scoped(layer, input, output, true)
}

/// Like [`count_layer_bp`], optionally without the gradient with respect to
/// the layer's input.
pub fn count_layer_bp_scoped(layer: &Layer, input: TensorShape, output: TensorShape, input_gradient: bool) -> OpCount {
    let passes: u128 = if input_gradient { 2 } else { 1 };
    let ci = input.channels as u128;
    match *layer {
        Layer::Convolution { kernel, out_channels, .. } => {
            let k = kernel as u128;
            let co = out_channels as u128;
            OpCount { macc: passes * k * k * ci * output.volume() + k * k * ci * co, ..OpCount::ZERO }
        }
        Layer::Dense { out_channels, bias } => {
            let fan_in = input.volume();
            let co = out_channels as u128;
            OpCount { macc: passes * fan_in * co + (fan_in + u128::from(bias)) * co, ..OpCount::ZERO }
        }
        _ => OpCount::ZERO,
    }
}

/// Whether each node must propagate a gradient to its input, i.e. whether
/// any trainable layer sits upstream of it.
fn needs_input_gradient(graph: &ArchitectureGraph) -> Result<HashMap<NodeId, bool>, GraphError> {
    let mut trainable_upstream: HashMap<NodeId, bool> = HashMap::new();
    let mut needs = HashMap::new();
    for node in graph.ordered_nodes()? {
        let upstream = node.inputs.iter().any(|s| match s {
            Source::Input => false,
            Source::Node(p) => trainable_upstream[p],
        });
        needs.insert(node.id, upstream);
        trainable_upstream.insert(node.id, upstream || node.layer.is_parameterized());
    }
    Ok(needs)
}

/// Forward and backward counts of every layer class in a graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Breakdown {
    pub classes: BTreeMap<LayerKind, (OpCount, OpCount)>,
}

impl Breakdown {
    pub fn fp(&self, kind: LayerKind) -> OpCount {
        self.classes.get(&kind).map(|c| c.0).unwrap_or_default()
    }

    pub fn bp(&self, kind: LayerKind) -> OpCount {
        self.classes.get(&kind).map(|c| c.1).unwrap_or_default()
    }

    pub fn total_fp(&self) -> OpCount {
        self.classes.values().map(|c| c.0).sum()
    }

    pub fn total_bp(&self) -> OpCount {
        self.classes.values().map(|c| c.1).sum()
    }
}

/// Per-class forward and backward counts for one image.
pub fn breakdown(graph: &ArchitectureGraph) -> Result<Breakdown, GraphError> {
    let shapes = graph.infer_shapes()?;
    let needs = needs_input_gradient(graph)?;
    let mut out = Breakdown::default();
    for node in graph.nodes() {
        let s = shapes[&node.id];
        let fp = count_layer_fp(&node.layer, s.input, s.output);
        let bp = count_layer_bp_scoped(&node.layer, s.input, s.output, needs[&node.id]);
        let entry = out.classes.entry(node.layer.kind()).or_default();
        entry.0 += fp;
        entry.1 += bp;
    }
    Ok(out)
}

pub fn count_image_fp(graph: &ArchitectureGraph) -> Result<OpCount, GraphError> {
    Ok(breakdown(graph)?.total_fp())
}

pub fn count_image_bp(graph: &ArchitectureGraph) -> Result<OpCount, GraphError> {
    Ok(breakdown(graph)?.total_bp())
}

/// Operation counts of one pass over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochOps {
    pub train_fp: OpCount,
    pub train_bp: OpCount,
    pub val_fp: OpCount,
}

impl EpochOps {
    pub fn training(&self) -> OpCount {
        self.train_fp + self.train_bp
    }

    pub fn total(&self) -> OpCount {
        self.training() + self.val_fp
    }
}

fn check_dataset(graph: &ArchitectureGraph, data: &DatasetDescriptor) -> Result<(), GraphError> {
    if graph.input_shape() != data.image_shape() {
        return Err(GraphError::InvalidInput(format!(
            "graph input {} does not match dataset images {}",
            graph.input_shape(),
            data.image_shape()
        )));
    }
    Ok(())
}

/// Training and validation counts for one epoch. Batch size does not enter:
/// accounting is per image.
pub fn count_epoch(graph: &ArchitectureGraph, data: &DatasetDescriptor) -> Result<EpochOps, GraphError> {
    check_dataset(graph, data)?;
    let b = breakdown(graph)?;
    let (fp, bp) = (b.total_fp(), b.total_bp());
    Ok(EpochOps {
        train_fp: fp * data.train_images() as u128,
        train_bp: bp * data.train_images() as u128,
        val_fp: fp * data.val_images() as u128,
    })
}

pub fn count_training_epoch(graph: &ArchitectureGraph, data: &DatasetDescriptor) -> Result<OpCount, GraphError> {
    Ok(count_epoch(graph, data)?.training())
}

pub fn count_validation_epoch(graph: &ArchitectureGraph, data: &DatasetDescriptor) -> Result<OpCount, GraphError> {
    Ok(count_epoch(graph, data)?.val_fp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Node, NodeId};

    fn shape(h: u32, w: u32, c: u32) -> TensorShape {
        TensorShape::new(h, w, c).unwrap()
    }

    #[test]
    fn dense_forward_and_backward() {
        let dense = Layer::Dense { out_channels: 1000, bias: true };
        let fp = count_layer_fp(&dense, shape(1, 1, 2048), shape(1, 1, 1000));
        assert_eq!(fp.macc, 2_048_000);
        assert_eq!(fp.weighted_total(), 4_096_000);
        let bp = count_layer_bp(&dense, shape(1, 1, 2048), shape(1, 1, 1000));
        assert_eq!(bp.macc, 6_145_000);
        assert_eq!(bp.weighted_total(), 12_290_000);
    }

    #[test]
    fn softmax_single_class() {
        let c = count_layer_fp(&Layer::Softmax, shape(1, 1, 1), shape(1, 1, 1));
        assert_eq!((c.exp, c.add, c.div), (1, 1, 1));
        assert_eq!(c.weighted_total(), 13);
    }

    #[test]
    fn non_parametric_layers_have_free_backward() {
        for layer in [Layer::ReLU, Layer::Add, Layer::BatchNorm, Layer::GlobalAvgPool, Layer::Softmax, Layer::MaxPool { kernel: 3, stride: 2 }] {
            assert!(count_layer_bp(&layer, shape(8, 8, 4), shape(8, 8, 4)).is_zero());
        }
    }

    #[test]
    fn unit_conv_backward() {
        let bp = count_layer_bp(&Layer::conv(1, 1, 1), shape(1, 1, 1), shape(1, 1, 1));
        assert_eq!(bp.macc, 3);
    }

    #[test]
    fn batchnorm_and_pool_formulas() {
        let bn = count_layer_fp(&Layer::BatchNorm, shape(4, 4, 2), shape(4, 4, 2));
        assert_eq!((bn.macc, bn.add, bn.div), (32, 32, 32));
        let mp = count_layer_fp(&Layer::MaxPool { kernel: 3, stride: 2 }, shape(8, 8, 2), shape(4, 4, 2));
        assert_eq!(mp.comparison, 9 * 32);
        let gap = count_layer_fp(&Layer::GlobalAvgPool, shape(7, 7, 2048), shape(1, 1, 2048));
        assert_eq!((gap.add, gap.div), (100_352, 2048));
    }

    #[test]
    fn minimal_graph_is_one_softmax() {
        let g = ArchitectureGraph::new(shape(1, 1, 1), vec![Node { id: NodeId(0), layer: Layer::Softmax, inputs: vec![Source::Input] }]).unwrap();
        assert_eq!(count_image_fp(&g).unwrap().weighted_total(), 13);
        assert!(count_image_bp(&g).unwrap().is_zero());
    }

    #[test]
    fn first_trainable_layer_skips_data_gradient() {
        let g = ArchitectureGraph::new(
            shape(4, 4, 1),
            vec![
                Node { id: NodeId(0), layer: Layer::conv(1, 1, 1), inputs: vec![Source::Input] },
                Node { id: NodeId(1), layer: Layer::conv(1, 1, 1), inputs: vec![Source::Node(NodeId(0))] },
                Node { id: NodeId(2), layer: Layer::Softmax, inputs: vec![Source::Node(NodeId(1))] },
            ],
        )
        .unwrap();
        let b = breakdown(&g).unwrap();
        // first conv: 16 weight-grad + 1 update; second: 32 + 1
        assert_eq!(b.bp(LayerKind::Convolution).macc, 17 + 33);
    }

    #[test]
    fn dataset_rejects_zero_images() {
        assert!(DatasetDescriptor::new(10, 0, shape(224, 224, 3)).is_err());
        assert!(DatasetDescriptor::new(0, 10, shape(224, 224, 3)).is_err());
    }

    #[test]
    fn weighted_identity() {
        let c = OpCount { macc: 3, add: 5, div: 7, comparison: 11, exp: 13 };
        assert_eq!(c.weighted_total(), 2 * 3 + 5 + 11 + 4 * 7 + 8 * 13);
    }
}
