mod common;

use aiperf::graph::{Layer, LayerKind};
use aiperf::opcount::{
    breakdown, count_epoch, count_image_bp, count_image_fp, count_layer_bp, count_layer_fp, count_training_epoch,
    count_validation_epoch, DatasetDescriptor,
};
use common::{conv_net, resnet50, shape};
use proptest::prelude::*;

// Frozen from an independent Python re-derivation of ResNet-50 v1 with the
// same layer formulas and weights (MACC 2, add 1, compare 1, div 4, exp 8).
const FP_CONV: u128 = 7_711_850_496;
const FP_BN: u128 = 74_109_952;
const FP_RELU: u128 = 9_081_856;
const FP_ADD: u128 = 5_519_360;
const FP_MAXPOOL: u128 = 1_806_336;
const FP_AVGPOOL: u128 = 108_544;
const FP_DENSE: u128 = 4_096_000;
const FP_SOFTMAX: u128 = 13_000;
const FP_TOTAL: u128 = 7_806_585_544;
const BP_CONV: u128 = 15_234_582_912;
const BP_TOTAL: u128 = 15_246_872_912;
const PARAMETERS: u64 = 25_557_032;

#[test]
fn resnet50_forward_by_class() {
    let b = breakdown(&resnet50()).unwrap();
    let fp = |k| b.fp(k).weighted_total();
    assert_eq!(fp(LayerKind::Convolution), FP_CONV);
    assert_eq!(fp(LayerKind::BatchNorm), FP_BN);
    assert_eq!(fp(LayerKind::ReLU), FP_RELU);
    assert_eq!(fp(LayerKind::Add), FP_ADD);
    assert_eq!(fp(LayerKind::MaxPool), FP_MAXPOOL);
    assert_eq!(fp(LayerKind::GlobalAvgPool), FP_AVGPOOL);
    assert_eq!(fp(LayerKind::Dense), FP_DENSE);
    assert_eq!(fp(LayerKind::Softmax), FP_SOFTMAX);
    assert_eq!(count_image_fp(&resnet50()).unwrap().weighted_total(), FP_TOTAL);
}

#[test]
fn resnet50_backward() {
    let g = resnet50();
    let b = breakdown(&g).unwrap();
    assert_eq!(b.bp(LayerKind::Convolution).weighted_total(), BP_CONV);
    assert_eq!(b.bp(LayerKind::Dense).weighted_total(), 12_290_000);
    assert_eq!(count_image_bp(&g).unwrap().weighted_total(), BP_TOTAL);
    for k in [LayerKind::BatchNorm, LayerKind::ReLU, LayerKind::Add, LayerKind::MaxPool, LayerKind::GlobalAvgPool, LayerKind::Softmax] {
        assert!(b.bp(k).is_zero(), "{k:?}");
    }
}

#[test]
fn resnet50_parameter_count() {
    assert_eq!(resnet50().parameter_count().unwrap(), PARAMETERS);
}

#[test]
fn imagenet_epoch_is_per_image_times_images() {
    let g = resnet50();
    let d = DatasetDescriptor::imagenet();
    let e = count_epoch(&g, &d).unwrap();
    let train = 1_281_167u128;
    assert_eq!(e.train_fp.weighted_total(), FP_TOTAL * train);
    assert_eq!(e.train_bp.weighted_total(), BP_TOTAL * train);
    assert_eq!(e.val_fp.weighted_total(), FP_TOTAL * 50_000);
    assert_eq!(count_training_epoch(&g, &d).unwrap().weighted_total(), 29_535_330_209_698_152);
    assert_eq!(count_validation_epoch(&g, &d).unwrap().weighted_total(), 390_329_277_200_000);
    assert_eq!(e.total().weighted_total(), 29_925_659_486_898_152);
}

#[test]
fn dataset_shape_must_match_graph() {
    let g = resnet50();
    let d = DatasetDescriptor::new(10, 10, shape(32, 32, 3)).unwrap();
    assert!(count_epoch(&g, &d).is_err());
}

proptest! {
    #[test]
    fn conv_backward_forward_ratio(
        h in 1u32..40, w in 1u32..40, ci in 1u32..64, co in 1u32..64,
        k in prop::sample::select(vec![1u32, 3, 5, 7]), s in 1u32..4,
    ) {
        let input = shape(h, w, ci);
        let out = shape(h.div_ceil(s), w.div_ceil(s), co);
        let layer = Layer::conv(k, s, co);
        let fp = count_layer_fp(&layer, input, out).weighted_total() as f64;
        let bp = count_layer_bp(&layer, input, out).weighted_total() as f64;
        let ratio = bp / fp;
        let hw = out.spatial() as f64;
        prop_assert!(ratio > 2.0);
        prop_assert!(ratio <= 2.0 + 1.0 / hw + 1e-12);
    }

    #[test]
    fn same_padding_uses_ceiling(h in 1u32..80, w in 1u32..80, s in 1u32..5, k in prop::sample::select(vec![1u32, 3, 5, 7])) {
        let g = conv_net(shape(h, w, 3), k, s, 8);
        let shapes = g.infer_shapes().unwrap();
        let out = shapes[&aiperf::graph::NodeId(0)].output;
        prop_assert_eq!((out.height, out.width, out.channels), (h.div_ceil(s), w.div_ceil(s), 8));
    }

    #[test]
    fn epoch_counts_are_linear_in_images(train in 1u64..5_000_000, val in 1u64..500_000) {
        let g = conv_net(shape(16, 16, 3), 3, 1, 8);
        let d = DatasetDescriptor::new(train, val, shape(16, 16, 3)).unwrap();
        let e = count_epoch(&g, &d).unwrap();
        let fp = count_image_fp(&g).unwrap().weighted_total();
        let bp = count_image_bp(&g).unwrap().weighted_total();
        prop_assert_eq!(e.train_fp.weighted_total(), fp * train as u128);
        prop_assert_eq!(e.train_bp.weighted_total(), bp * train as u128);
        prop_assert_eq!(e.val_fp.weighted_total(), fp * val as u128);
        prop_assert_eq!(e.total().weighted_total(), (fp + bp) * train as u128 + fp * val as u128);
    }
}
