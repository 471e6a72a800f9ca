//! The fixed seed architecture: ResNet-50 v1.
//!
//! Downsampling bottlenecks put the stride on their first 1×1 convolution,
//! and every stage opens with a projection shortcut.

use crate::graph::{ArchitectureGraph, GraphError, Layer, Node, NodeId, Source, TensorShape};

/// (blocks, bottleneck width) per stage.
const STAGES: [(u32, u32); 4] = [(3, 64), (4, 128), (6, 256), (3, 512)];
const EXPANSION: u32 = 4;

struct Builder {
    nodes: Vec<Node>,
}

impl Builder {
    fn push(&mut self, layer: Layer, inputs: Vec<Source>) -> Source {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { id, layer, inputs });
        Source::Node(id)
    }

    fn conv_bn(&mut self, from: Source, kernel: u32, stride: u32, channels: u32) -> Source {
        let conv = self.push(Layer::conv(kernel, stride, channels), vec![from]);
        self.push(Layer::BatchNorm, vec![conv])
    }

    fn conv_bn_relu(&mut self, from: Source, kernel: u32, stride: u32, channels: u32) -> Source {
        let bn = self.conv_bn(from, kernel, stride, channels);
        self.push(Layer::ReLU, vec![bn])
    }

    fn bottleneck(&mut self, from: Source, width: u32, stride: u32, project: bool) -> Source {
        let a = self.conv_bn_relu(from, 1, stride, width);
        let b = self.conv_bn_relu(a, 3, 1, width);
        let c = self.conv_bn(b, 1, 1, width * EXPANSION);
        let shortcut = if project { self.conv_bn(from, 1, stride, width * EXPANSION) } else { from };
        let sum = self.push(Layer::Add, vec![c, shortcut]);
        self.push(Layer::ReLU, vec![sum])
    }
}

/// Builds ResNet-50 for the given input and class count.
///
/// The graph has 53 convolutions, 53 batch norms and a single dense layer
/// mapping 2048 features to `num_classes`. Inputs smaller than 32 pixels on
/// either side are rejected since the five stride-2 stages would collapse
/// them below one pixel of useful resolution.
pub fn build_resnet50(input_shape: TensorShape, num_classes: u32) -> Result<ArchitectureGraph, GraphError> {
    if input_shape.height < 32 || input_shape.width < 32 {
        return Err(GraphError::InvalidInput(format!("ResNet-50 needs at least 32x32 input, got {input_shape}")));
    }
    if num_classes == 0 {
        return Err(GraphError::InvalidInput("num_classes must be positive".into()));
    }
    let mut b = Builder { nodes: Vec::with_capacity(180) };
    let stem = b.conv_bn_relu(Source::Input, 7, 2, 64);
    let mut x = b.push(Layer::MaxPool { kernel: 3, stride: 2 }, vec![stem]);
    for (stage, &(blocks, width)) in STAGES.iter().enumerate() {
        for block in 0..blocks {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            x = b.bottleneck(x, width, stride, block == 0);
        }
    }
    let pooled = b.push(Layer::GlobalAvgPool, vec![x]);
    let logits = b.push(Layer::Dense { out_channels: num_classes, bias: true }, vec![pooled]);
    b.push(Layer::Softmax, vec![logits]);
    ArchitectureGraph::new(input_shape, b.nodes)
}
