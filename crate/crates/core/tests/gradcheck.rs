mod common;

use common::*;

fn assert_close(name: &str, err: f64) {
    assert!(err <= REL_TOL, "{name}: relative error {err:.3e}");
}

#[test]
fn convolutions() {
    assert_close("causal", conv1d_causal());
    assert_close("same", conv1d_same());
    assert_close("strided", conv1d_strided());
}

#[test]
fn dense_layers() {
    assert_close("linear", linear_layer());
    assert_close("film", film_layer());
    assert_close("attention_pool", attention_pooling());
}

#[test]
fn activations_and_reductions() {
    for (name, err) in activations() {
        assert_close(name, err);
    }
}

#[test]
fn noise_synthesis() {
    assert_close("impulse responses", noise_impulse_responses());
    assert_close("filtered noise", filtered_noise_chain());
}

#[test]
fn spectral_loss() {
    assert_close("mss", mss_loss());
}

#[test]
fn film_conditioning_reaches_z() {
    assert_close("gamma/beta wrt z", film_gamma_wrt_z());
}

#[test]
fn model_weights_end_to_end() {
    assert_close("noise encoder", noise_encoder_through_mss());
    assert_close("conditioning", conditioning_through_mss());
    assert_close("tcn", tcn_through_mss());
}
