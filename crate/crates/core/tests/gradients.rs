mod common;

use common::gradcheck::SUITE;
use common::FD_TOL;

fn run(name: &str) {
    let (_, check, instances) = SUITE.iter().find(|(n, _, _)| *n == name).expect("known check");
    let err = check(*instances, 11);
    assert!(err <= FD_TOL, "{name}: worst relative error {err:.3e} over {instances} instances");
}

#[test]
fn mlp_gradients() {
    run("mlp");
}

#[test]
fn lstm_gradients() {
    run("lstm");
}

#[test]
fn graph_filter_gradients() {
    run("graph_filter");
}

#[test]
fn kernel_covariance_gradients() {
    run("kernel_covariance");
}

#[test]
fn cholesky_sample_gradients() {
    run("cholesky_sample");
}

#[test]
fn psi_forward_gradients() {
    run("psi_forward");
}

#[test]
fn step_loss_gradients() {
    run("step_loss");
}

#[test]
fn rollout_gradients() {
    run("rollout");
}

#[test]
fn checker_flags_a_wrong_derivative() {
    use pfkit::numerics::{Matrix, ParamStore, Tape};
    use std::rc::Rc;
    let mut store = ParamStore::new();
    let mut inputs = vec![Matrix::from_vec(1, 3, vec![0.3, -1.2, 2.0]).unwrap()];
    let err = common::gradient_error(&mut store, &mut inputs, &|tape: &mut Tape, v| {
        let y = tape.pointwise(v[0], Rc::new(|x: f64| (x.sin(), 2.0 * x.cos())));
        Ok(tape.sum(y))
    });
    assert!(err > 0.1, "wrong derivative went unnoticed: {err:.3e}");
}
