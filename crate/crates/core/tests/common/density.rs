//! Density oracles for the learnable families: grid quadrature of the
//! invertible transform and self-sample entropy of the Gaussian head.

use pfkit::numerics::layers::mlp_forward;
use pfkit::numerics::{Matrix, ParamStore, Rng};
use pfkit::pf::Proposal;
use pfkit::proposals::{
    kernel_covariance, Architecture, Frame, GaussianProposalParams, LearnedProposal, Parametrization, Psi, Registry,
    StepCtx,
};
use pfkit::ssm::{scalar_model, ModelSpec, NoiseFamily, InitialLaw, NoiseLaw, Nonlinearity};

use super::{random_matrix, small_arch};

/// Linear-Gaussian model of dimension `n` with `M = 1`.
pub fn tiny_model(n: usize) -> ModelSpec {
    if n == 1 {
        return scalar_model(0.9, 1.0, 0.0, 1.0, 0.5, 0.5).unwrap();
    }
    let model = ModelSpec {
        n,
        m: 1,
        a: Matrix::identity(n).scale(0.8),
        c: Matrix::filled(1, n, 1.0),
        phi: Nonlinearity::Identity,
        state_noise: NoiseLaw::gaussian(0.5).unwrap(),
        measurement_noise: NoiseLaw::gaussian(0.5).unwrap(),
        initial: InitialLaw { family: NoiseFamily::Gaussian, mean: vec![0.0; n], variance: vec![1.0; n] },
    };
    model.validate().unwrap();
    model
}

/// Random transform parameters: the default initialization plus a
/// perturbation of relative size `spread`.
pub fn random_psi(model: &ModelSpec, layers: usize, spread: f64, rng: &mut Rng) -> (Psi, ParamStore) {
    let psi = Psi { layers };
    let mut store = psi.init(model, 1, rng).unwrap();
    for id in 0..store.len() {
        let (r, c) = store.value(id).shape();
        let noise = random_matrix(rng, r, c, spread);
        let v = store.value_mut(id);
        *v = v.add(&noise).unwrap();
    }
    (psi, store)
}

/// Midpoint-rule integral of `exp(log π)` over a box that covers the image
/// of the unit cube, with `cells` cells per axis.
pub fn psi_mass(model: &ModelSpec, psi: &Psi, store: &ParamStore, frame: &Frame, cells: usize) -> f64 {
    let ctx = StepCtx::new(model, frame);
    let n = model.n;
    let x_prev = vec![0.3; n];
    let y = vec![0.5; model.m];
    // The image is bounded by the images of the cube's faces; sample them
    // densely and pad the resulting box.
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let per_axis = if n == 1 { 2 } else { 401 };
    let mut u = vec![0.0; n];
    for face_axis in 0..n {
        for side in [0.0, 1.0] {
            for j in 0..per_axis.max(1) {
                u[face_axis] = side;
                for (a, ui) in u.iter_mut().enumerate() {
                    if a != face_axis {
                        *ui = j as f64 / (per_axis - 1) as f64;
                    }
                }
                let x = psi.sample_with(store, &ctx, 1, &x_prev, &y, &u).unwrap();
                for i in 0..n {
                    lo[i] = lo[i].min(x[i]);
                    hi[i] = hi[i].max(x[i]);
                }
            }
        }
    }
    for i in 0..n {
        let pad = 0.02 * (hi[i] - lo[i]);
        lo[i] -= pad;
        hi[i] += pad;
    }
    let h: Vec<f64> = (0..n).map(|i| (hi[i] - lo[i]) / cells as f64).collect();
    let cell_volume: f64 = h.iter().product();
    let mut total = 0.0;
    let mut idx = vec![0usize; n];
    loop {
        let x: Vec<f64> = (0..n).map(|i| lo[i] + (idx[i] as f64 + 0.5) * h[i]).collect();
        total += psi.logpdf(store, &ctx, 1, &x_prev, &y, &x).unwrap().exp();
        let mut a = 0;
        loop {
            idx[a] += 1;
            if idx[a] < cells {
                break;
            }
            idx[a] = 0;
            a += 1;
            if a == n {
                return total * cell_volume;
            }
        }
    }
}

/// Outcome of the entropy check: mean of `−log π` over self-samples, the
/// closed-form entropy, and the standard error of the mean.
pub struct EntropyCheck {
    pub empirical: f64,
    pub closed_form: f64,
    pub std_error: f64,
    /// Largest gap between the sampler's `log π` and the closed-form density.
    pub log_q_gap: f64,
}

/// Draws `samples` particles from a freshly initialized fully connected
/// proposal at one fixed input pair and scores them with an independently
/// computed multivariate normal.
pub fn mlp_head_entropy(n: usize, samples: usize, seed: u64) -> EntropyCheck {
    let model = tiny_model(n);
    let cfg = small_arch(Parametrization::Plain);
    let mut rng = Rng::new(seed);
    let arch = Registry::default().architecture("mlp", &cfg).unwrap();
    let mut lp = LearnedProposal::initialized(arch, &cfg, &model, 1, &mut rng).unwrap();
    let c_id = lp.params.id("C").unwrap();
    *lp.params.value_mut(c_id) = Matrix::identity(n).add(&random_matrix(&mut rng, n, n, 0.3)).unwrap();
    let x_prev: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let y = vec![0.7; model.m];

    // Closed-form mean and covariance from the value-form networks.
    let input: Vec<f64> = x_prev.iter().chain(&y).copied().collect();
    let layers = |prefix: &str| -> Vec<(Matrix, Vec<f64>)> {
        (0..cfg.mlp_hidden.len() + 1)
            .map(|i| {
                let w = lp.params.get(&format!("{prefix}.{i}.w")).unwrap().clone();
                let b = lp.params.get(&format!("{prefix}.{i}.b")).unwrap().as_slice().to_vec();
                (w, b)
            })
            .collect()
    };
    let mean = mlp_forward(&layers("mu.1"), &input).unwrap();
    let z = mlp_forward(&layers("sigma"), &input).unwrap();
    let cov = kernel_covariance(&z, lp.params.get("C").unwrap()).unwrap();
    let head = GaussianProposalParams::new(mean, cov).unwrap();

    let mut prev = Matrix::zeros(samples, n);
    for p in 0..samples {
        prev.row_mut(p).copy_from_slice(&x_prev);
    }
    let memory = Matrix::zeros(samples, 0);
    let draw = lp.propose(&model, 1, &prev, &memory, &y, &mut rng).unwrap();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut gap: f64 = 0.0;
    for p in 0..samples {
        let lp_closed = head.logpdf(draw.states.row(p));
        gap = gap.max((lp_closed - draw.log_q[p]).abs());
        sum -= lp_closed;
        sum_sq += lp_closed * lp_closed;
    }
    let k = samples as f64;
    let mean_nll = sum / k;
    let var = sum_sq / k - mean_nll * mean_nll;
    EntropyCheck { empirical: mean_nll, closed_form: head.entropy(), std_error: (var / k).sqrt(), log_q_gap: gap }
}

/// Unit-weight scalar transform `x = tanh(u)`.
pub fn unit_tanh_psi() -> (ModelSpec, Psi, ParamStore) {
    let model = tiny_model(1);
    let psi = Psi { layers: 0 };
    let mut store = ParamStore::new();
    store.insert("psi.1.A", Matrix::identity(1)).unwrap();
    store.insert("psi.1.B", Matrix::zeros(1, 1)).unwrap();
    store.insert("psi.1.C", Matrix::zeros(1, 1)).unwrap();
    store.insert("psi.1.log_s", Matrix::zeros(1, 1)).unwrap();
    (model, psi, store)
}

pub fn plain_frame(model: &ModelSpec) -> Frame {
    Frame::new(model, Parametrization::Plain)
}

pub fn arch_for(name: &str, parametrization: Parametrization) -> Box<dyn Architecture> {
    Registry::default().architecture(name, &small_arch(parametrization)).unwrap()
}
