mod common;

use aiperf::hpo::{halton_point, predict_warmup_error, suggest, tpe_ratios, HpoObservation, HyperParams, BATCH_SIZES, KERNEL_SIZES};
use common::{record, shape, tpe_concentration};
use proptest::prelude::*;

fn obs(b: u32, k: u32, e: f64) -> HpoObservation {
    HpoObservation::new(HyperParams::new(b, k).unwrap(), e, false).unwrap()
}

#[test]
fn tpe_finds_the_good_batch_size() {
    let o = vec![
        obs(448, 1, 0.1),
        obs(32, 3, 0.9),
        obs(64, 5, 0.9),
        obs(448, 3, 0.1),
        obs(128, 7, 0.9),
        obs(256, 1, 0.9),
        obs(512, 3, 0.9),
        obs(32, 5, 0.9),
    ];
    assert_eq!(suggest(&o, 0).batch_size(), 448);
    let ratios = tpe_ratios(&o);
    let best = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    assert!(ratios.iter().filter(|r| r.1 == best).all(|r| r.0.batch_size() == 448));
}

#[test]
fn concentration_on_synthetic_objective() {
    let passing = (0..10).filter(|&s| tpe_concentration(s) >= 0.5).count();
    assert!(passing >= 8, "{passing}/10 seeds concentrate");
}

#[test]
fn warmup_prediction_examples() {
    let g = aiperf::resnet::build_resnet50(shape(32, 32, 3), 10).unwrap();
    let p = g.parameter_count().unwrap();
    assert_eq!(predict_warmup_error(&[], p), 0.9);
    assert_eq!(predict_warmup_error(&[record(g.clone(), 0.4, 0.0)], p), 0.4);
    let three = vec![record(g.clone(), 0.2, 0.0), record(g.clone(), 0.4, 1.0), record(g.clone(), 0.6, 2.0)];
    assert!((predict_warmup_error(&three, p * 2) - 0.4).abs() < 1e-12);
}

#[test]
fn warmup_prediction_uses_three_nearest() {
    let g = aiperf::resnet::build_resnet50(shape(32, 32, 3), 10).unwrap();
    let mut far = record(g.clone(), 0.9, 3.0);
    far.parameters = 10 * g.parameter_count().unwrap();
    let near: Vec<_> = [0.2, 0.3, 0.4].iter().enumerate().map(|(i, &e)| record(g.clone(), e, i as f64)).collect();
    let mut all = near.clone();
    all.push(far);
    assert!((predict_warmup_error(&all, g.parameter_count().unwrap()) - 0.3).abs() < 1e-12);
}

proptest! {
    #[test]
    fn suggestions_stay_on_the_grid(
        seed in any::<u64>(),
        points in prop::collection::vec((0usize..6, 0usize..4, 0.001f64..0.999), 0..30),
    ) {
        let o: Vec<_> = points.iter().map(|&(b, k, e)| obs(BATCH_SIZES[b], KERNEL_SIZES[k], e)).collect();
        let p = suggest(&o, seed);
        prop_assert!(BATCH_SIZES.contains(&p.batch_size()));
        prop_assert!(KERNEL_SIZES.contains(&p.kernel_size()));
        prop_assert_eq!(p, suggest(&o, seed));
    }

    #[test]
    fn halton_walk_is_on_the_grid(n in 0usize..10_000, seed in any::<u64>()) {
        let p = halton_point(n, seed);
        prop_assert!(HyperParams::new(p.batch_size(), p.kernel_size()).is_ok());
    }
}
