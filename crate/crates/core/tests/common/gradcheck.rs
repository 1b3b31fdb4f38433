//! Finite-difference checks of every differentiable building block. Each
//! check returns the worst relative error over its instances.

use std::rc::Rc;

use pfkit::numerics::layers::{init_graph_filter, init_lstm, init_mlp, graph_filter_on_tape, lstm_on_tape, mlp_on_tape};
use pfkit::numerics::{Activation, Matrix, ParamStore, Rng, Tape};
use pfkit::proposals::{Architecture, Frame, LearnedProposal, Parametrization, Psi, Registry, StepCtx};
use pfkit::ssm::{build_scenario, simulate, Scenario};
use pfkit::training::{rollout, step_loss};

use super::{gradient_error, project, random_matrix, small_arch};

pub type Check = fn(usize, u64) -> f64;

/// Name, check and the number of instances the suite runs.
pub const SUITE: &[(&str, Check, usize)] = &[
    ("mlp", mlp, 100),
    ("lstm", lstm, 100),
    ("graph_filter", graph_filter, 100),
    ("kernel_covariance", kernel_covariance, 100),
    ("cholesky_sample", cholesky_sample, 100),
    ("psi_forward", psi_forward, 100),
    ("step_loss", step_loss_check, 100),
    ("rollout", rollout_check, 20),
];

fn worst(instances: usize, seed: u64, mut one: impl FnMut(&mut Rng) -> f64) -> f64 {
    (0..instances).map(|i| one(&mut Rng::derive(seed, &[i as u64]))).fold(0.0, f64::max)
}

pub fn mlp(instances: usize, seed: u64) -> f64 {
    worst(instances, seed, |rng| {
        let mut store = ParamStore::new();
        init_mlp(&mut store, "m", &[4, 5, 3], rng).unwrap();
        let k = 1 + rng.below(3);
        let out_act = if rng.uniform() < 0.5 { Activation::Tanh } else { Activation::Identity };
        let r = random_matrix(rng, k, 3, 1.0);
        let mut inputs = vec![random_matrix(rng, k, 4, 1.0)];
        gradient_error(&mut store, &mut inputs, &|tape: &mut Tape, v| {
            let out = mlp_on_tape(tape, "m", 2, v[0], out_act)?;
            project(tape, out, &r)
        })
    })
}

pub fn lstm(instances: usize, seed: u64) -> f64 {
    worst(instances, seed, |rng| {
        let mut store = ParamStore::new();
        init_lstm(&mut store, "l", 3, 4, rng).unwrap();
        let b = store.id("l.b").unwrap();
        *store.value_mut(b) = random_matrix(rng, 1, 16, 0.5);
        let k = 1 + rng.below(3);
        let rh = random_matrix(rng, k, 4, 1.0);
        let rc = random_matrix(rng, k, 4, 1.0);
        let mut inputs = vec![random_matrix(rng, k, 3, 1.0), random_matrix(rng, k, 4, 0.5), random_matrix(rng, k, 4, 0.5)];
        gradient_error(&mut store, &mut inputs, &|tape: &mut Tape, v| {
            let (h, c) = lstm_on_tape(tape, "l", v[0], v[1], v[2])?;
            let a = project(tape, h, &rh)?;
            let b = project(tape, c, &rc)?;
            tape.add(a, b)
        })
    })
}

pub fn graph_filter(instances: usize, seed: u64) -> f64 {
    worst(instances, seed, |rng| {
        let n = 3 + rng.below(3);
        let order = rng.below(4);
        let (fin, fout) = (1 + rng.below(3), 1 + rng.below(3));
        let s = random_matrix(rng, n, n, 0.5);
        let shift = Rc::new(s.add(&s.transpose()).unwrap().scale(0.5));
        let mut store = ParamStore::new();
        init_graph_filter(&mut store, "g", order, fin, fout, rng).unwrap();
        let k = 1 + rng.below(2);
        let r = random_matrix(rng, k * n, fout, 1.0);
        let mut inputs = vec![random_matrix(rng, k * n, fin, 1.0)];
        gradient_error(&mut store, &mut inputs, &|tape: &mut Tape, v| {
            let out = graph_filter_on_tape(tape, "g", order, &shift, v[0])?;
            project(tape, out, &r)
        })
    })
}

pub fn kernel_covariance(instances: usize, seed: u64) -> f64 {
    worst(instances, seed, |rng| {
        let n = 2 + rng.below(4);
        let r = random_matrix(rng, n, n, 1.0);
        let mut store = ParamStore::new();
        let mut inputs = vec![random_matrix(rng, 1, n, 0.8), random_matrix(rng, n, n, 1.0)];
        gradient_error(&mut store, &mut inputs, &|tape: &mut Tape, v| {
            let k = tape.kernel_matrix(v[0])?;
            let ck = tape.matmul(v[1], k)?;
            let cov = tape.matmul_t(ck, v[1])?;
            project(tape, cov, &r)
        })
    })
}

pub fn cholesky_sample(instances: usize, seed: u64) -> f64 {
    worst(instances, seed, |rng| {
        let n = 1 + rng.below(5);
        let k = 1 + rng.below(3);
        let u = random_matrix(rng, k, n, 1.0);
        let r = random_matrix(rng, k, n, 1.0);
        let mut store = ParamStore::new();
        let mut inputs = vec![random_matrix(rng, 1, n, 1.0), random_matrix(rng, n, n, 1.0)];
        gradient_error(&mut store, &mut inputs, &|tape: &mut Tape, v| {
            let bbt = tape.matmul_t(v[1], v[1])?;
            let cov = tape.add_diag(bbt, 0.5)?;
            let l = tape.cholesky(cov)?;
            let uc = tape.constant(u.clone());
            let offsets = tape.matmul_t(uc, l)?;
            let mu = tape.tile_rows(v[0], k);
            let x = tape.add(mu, offsets)?;
            project(tape, x, &r)
        })
    })
}

pub fn psi_forward(instances: usize, seed: u64) -> f64 {
    let model = build_scenario(Scenario::LinearGaussian, 4, 5.0, seed).unwrap();
    worst(instances, seed, |rng| {
        let mode = if rng.uniform() < 0.5 { Parametrization::Anchored } else { Parametrization::Plain };
        let psi = Psi { layers: 1 + rng.below(3) };
        let mut store = psi.init(&model, 1, rng).unwrap();
        for id in 0..store.len() {
            let (r, c) = store.value(id).shape();
            let jitter = random_matrix(rng, r, c, 0.05);
            let v = store.value_mut(id);
            *v = v.add(&jitter).unwrap();
        }
        let frame = Frame::new(&model, mode);
        let k = 1 + rng.below(3);
        let mut noise = Matrix::zeros(k, 4);
        rng.fill_uniform(noise.as_mut_slice());
        let y: Vec<f64> = (0..model.m).map(|_| rng.normal()).collect();
        let r = random_matrix(rng, k, 4, 1.0);
        let mut inputs = vec![random_matrix(rng, k, 4, 1.0)];
        gradient_error(&mut store, &mut inputs, &|tape: &mut Tape, v| {
            let ctx = StepCtx::new(&model, &frame);
            let d = psi.draw(tape, &ctx, 1, v[0], None, &y, &noise)?;
            project(tape, d.sample, &r)
        })
    })
}

pub fn step_loss_check(instances: usize, seed: u64) -> f64 {
    let models = [
        build_scenario(Scenario::LinearGaussian, 5, 5.0, seed).unwrap(),
        build_scenario(Scenario::NonlinearGaussian, 5, 5.0, seed).unwrap(),
    ];
    worst(instances, seed, |rng| {
        let model = &models[rng.below(2)];
        let k = 1 + rng.below(4);
        let y: Vec<f64> = (0..model.m).map(|_| 2.0 * rng.normal()).collect();
        let mut store = ParamStore::new();
        let mut inputs = vec![random_matrix(rng, k, 5, 2.0), random_matrix(rng, k, 5, 2.0)];
        gradient_error(&mut store, &mut inputs, &|tape: &mut Tape, v| Ok(step_loss(tape, model, v[0], v[1], &y)?.0))
    })
}

/// Whole training rollouts of every learnable family with resampling
/// switched off, so that the loss is smooth in the parameters.
pub fn rollout_check(instances: usize, seed: u64) -> f64 {
    let model = build_scenario(Scenario::LinearGaussian, 4, 5.0, seed).unwrap();
    let traj = simulate(&model, 2, &mut Rng::derive(seed, &[1]));
    let registry = Registry::default();
    worst(instances, seed, |rng| {
        let family = ["mlp", "rnn", "gnn", "psi"][rng.below(4)];
        let mode = if rng.uniform() < 0.5 { Parametrization::Anchored } else { Parametrization::Plain };
        let cfg = small_arch(mode);
        let arch = registry.architecture(family, &cfg).unwrap();
        let lp = LearnedProposal::initialized(arch, &cfg, &model, 2, rng).unwrap();
        let stream = Rng::new(rng.next_u64());
        // The tape reads parameters from its own store, so the proposal
        // only contributes its family and frame here.
        let mut store = lp.params;
        let view = LearnedProposal::new(lp.arch, ParamStore::new(), lp.frame);
        gradient_error(&mut store, &mut [], &|tape: &mut Tape, _| {
            Ok(rollout(tape, &view, &model, &traj.measurements, 3, 1e-9, &stream)?.loss)
        })
    })
}
