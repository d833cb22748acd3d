//! Analytic gradients of every differentiable layer against central
//! differences, over 100 random instances per layer.

use crnn_core::gradcheck::{GradCheck, CTC_CHECK, LAYER_CHECKS};

const INSTANCES: u64 = 100;

fn check(name: &str) {
    let c: &GradCheck = LAYER_CHECKS.iter().find(|c| c.name == name).expect("known check");
    for seed in 0..INSTANCES {
        let err = (c.instance)(seed);
        assert!(err < c.tolerance, "{name} seed {seed}: relative error {err}");
    }
}

#[test]
fn every_layer_has_a_check() {
    assert_eq!(LAYER_CHECKS.len(), 11);
}

#[test]
fn matmul_gradients() {
    check("matmul");
}

#[test]
fn projection_gradients() {
    check("projection");
}

#[test]
fn relu_gradients() {
    check("relu");
}

#[test]
fn softmax_gradients() {
    check("softmax");
}

#[test]
fn conv2d_gradients() {
    check("conv2d");
}

#[test]
fn maxpool_gradients() {
    check("maxpool");
}

#[test]
fn batchnorm_gradients_in_both_modes() {
    check("batchnorm (training)");
    check("batchnorm (inference)");
}

#[test]
fn map_to_sequence_gradients() {
    check("map-to-sequence");
}

#[test]
fn lstm_bptt_gradients_over_five_steps() {
    check("lstm");
}

#[test]
fn stacked_bilstm_gradients() {
    check("stacked bi-lstm");
}

#[test]
fn ctc_gradients() {
    for seed in 0..INSTANCES {
        let err = (CTC_CHECK.instance)(seed);
        assert!(err < CTC_CHECK.tolerance, "seed {seed}: relative error {err}");
    }
}
