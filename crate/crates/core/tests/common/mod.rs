#![allow(dead_code)]

use pfkit::numerics::{Matrix, ParamStore, Rng, Tape, Var};
use pfkit::proposals::{ArchConfig, Parametrization};
use pfkit::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub type LossFn<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

fn evaluate(store: &ParamStore, inputs: &[Matrix], f: &LossFn) -> f64 {
    let mut tape = Tape::with_params(store);
    let leaves: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = f(&mut tape, &leaves).expect("loss evaluation");
    tape.scalar(loss)
}

/// Tape gradient of `f` with respect to every input entry and every
/// parameter, flattened in store order after the inputs.
pub fn tape_gradient(store: &ParamStore, inputs: &[Matrix], f: &LossFn) -> Vec<f64> {
    let mut tape = Tape::with_params(store);
    let leaves: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = f(&mut tape, &leaves).expect("loss evaluation");
    let grads = tape.backward(loss).expect("backward");
    let mut out = Vec::new();
    for (v, m) in leaves.iter().zip(inputs) {
        match grads.leaf(*v) {
            Some(g) => out.extend_from_slice(g.as_slice()),
            None => out.extend(std::iter::repeat(0.0).take(m.len())),
        }
    }
    for id in 0..store.len() {
        match grads.param(id) {
            Some(g) => out.extend_from_slice(g.as_slice()),
            None => out.extend(std::iter::repeat(0.0).take(store.value(id).len())),
        }
    }
    out
}

/// Central differences in the same layout as [`tape_gradient`].
pub fn fd_gradient(store: &mut ParamStore, inputs: &mut [Matrix], f: &LossFn) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].as_slice()[j];
            inputs[i].as_mut_slice()[j] = x0 + FD_STEP;
            let up = evaluate(store, inputs, f);
            inputs[i].as_mut_slice()[j] = x0 - FD_STEP;
            let down = evaluate(store, inputs, f);
            inputs[i].as_mut_slice()[j] = x0;
            out.push((up - down) / (2.0 * FD_STEP));
        }
    }
    for id in 0..store.len() {
        for j in 0..store.value(id).len() {
            let x0 = store.value(id).as_slice()[j];
            store.value_mut(id).as_mut_slice()[j] = x0 + FD_STEP;
            let up = evaluate(store, inputs, f);
            store.value_mut(id).as_mut_slice()[j] = x0 - FD_STEP;
            let down = evaluate(store, inputs, f);
            store.value_mut(id).as_mut_slice()[j] = x0;
            out.push((up - down) / (2.0 * FD_STEP));
        }
    }
    out
}

/// `‖g_tape − g_fd‖ / max(‖g_tape‖, ‖g_fd‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn gradient_error(store: &mut ParamStore, inputs: &mut [Matrix], f: &LossFn) -> f64 {
    let ad = tape_gradient(store, inputs, f);
    let fd = fd_gradient(store, inputs, f);
    relative_error(&ad, &fd)
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    rng.fill_normal(m.as_mut_slice());
    m.scale(scale)
}

/// Scalar `Σ out ⊙ R` for a fixed random `R`, so every output entry gets a
/// distinct adjoint.
pub fn project(tape: &mut Tape, out: Var, weights: &Matrix) -> Result<Var> {
    let r = tape.constant(weights.clone());
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

/// Narrow networks so that checks stay fast.
pub fn small_arch(parametrization: Parametrization) -> ArchConfig {
    ArchConfig {
        mlp_hidden: vec![6, 5],
        rnn_hidden: 4,
        gnn_features: vec![3, 2],
        gnn_order: 2,
        psi_layers: 2,
        parametrization,
    }
}

pub fn median(values: &[f64]) -> f64 {
    pfkit::harness::aggregate(values).expect("non-empty").0
}

pub mod gradcheck;
pub mod density;
