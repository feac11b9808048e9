mod common;

use aecnn::aecnn::AlignVariant;
use common::*;

#[test]
fn every_op_matches_central_differences() {
    for (i, op) in OPS.iter().enumerate() {
        let worst = op_worst_ratio(op, 100, 100 + i as u64);
        assert!(worst <= 1.0, "{op}: worst error ratio {worst}");
    }
}

#[test]
fn classify_loss_probe_matches_central_differences() {
    for variant in [
        AlignVariant::PlainEdgeConv,
        AlignVariant::Aeconv1,
        AlignVariant::Aeconv2,
        AlignVariant::Aeconv3,
    ] {
        for norm in [false, true] {
            let worst = network_probe_ratio(variant, norm, 11);
            assert!(worst <= 1.0, "{variant:?} norm={norm}: ratio {worst}");
        }
    }
}

#[test]
fn probe_holds_across_seeds() {
    for seed in 20..28 {
        for variant in [AlignVariant::Aeconv1, AlignVariant::Aeconv3] {
            let worst = network_probe_ratio(variant, true, seed);
            assert!(worst <= 1.0, "{variant:?} seed {seed}: ratio {worst}");
        }
    }
}
