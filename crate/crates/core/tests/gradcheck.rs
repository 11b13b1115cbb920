//! Analytic gradients against central finite differences on the tiny model.

mod support;

use geoscore::network::NetworkConfig;
use geoscore::training::Stage;
use support::gradcheck::{check, describe, generic_point};

#[test]
fn multitask_loss_gradient_matches_finite_differences() {
    let params = generic_point(11, &NetworkConfig::tiny());
    let (err, at) = check(Stage::Multitask, false, 11);
    println!("multitask: {} params, max relative error {err:.3e} at {}", params.len(), describe(at));
    assert!(err < 1e-4, "max relative error {err:e} at {}", describe(at));
}

#[test]
fn pretrain_loss_gradient_matches_finite_differences() {
    let (err, at) = check(Stage::Pretrain, false, 12);
    assert!(err < 1e-4, "max relative error {err:e} at {}", describe(at));
}

#[test]
fn frozen_geo_loss_gradient_matches_finite_differences() {
    let (err, at) = check(Stage::Multitask, true, 13);
    assert!(err < 1e-4, "max relative error {err:e} at {}", describe(at));
}
