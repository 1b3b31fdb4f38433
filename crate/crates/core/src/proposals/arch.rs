//! The interface every learnable family implements, and the Gaussian head
//! shared by the mean/covariance families.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::frame::{Frame, Parametrization, OUTPUT_GAIN};
use super::gaussian::{head_jitter, HALF_LN_2PI};
use crate::error::Result;
use crate::numerics::{Matrix, ParamStore, Rng, Tape, Var};
use crate::ssm::{ModelSpec, Scenario};

/// Distribution of the parameter-free noise a family transforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    StdNormal,
    Uniform01,
}

impl NoiseKind {
    pub fn draw(self, rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        match self {
            NoiseKind::StdNormal => rng.fill_normal(m.as_mut_slice()),
            NoiseKind::Uniform01 => rng.fill_uniform(m.as_mut_slice()),
        }
        m
    }
}

/// Fixed inputs of one proposal evaluation.
pub struct StepCtx<'a> {
    pub model: &'a ModelSpec,
    pub frame: &'a Frame,
    /// Graph shift operator for graph families (the transition matrix).
    pub shift: Rc<Matrix>,
}

impl<'a> StepCtx<'a> {
    pub fn new(model: &'a ModelSpec, frame: &'a Frame) -> Self {
        Self { model, frame, shift: Rc::new(model.a.clone()) }
    }
}

/// Output of a family on a batch of particles.
pub struct Draw {
    /// K × N reparametrized samples.
    pub sample: Var,
    /// K × memory_len updated memory, if the family carries one.
    pub memory: Option<Var>,
    /// `log π` of each sample, evaluated from forward values.
    pub log_q: Vec<f64>,
}

/// Layer sizes of the learnable families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Hidden widths of the mean and representation networks.
    pub mlp_hidden: Vec<usize>,
    /// LSTM state size.
    pub rnn_hidden: usize,
    /// Hidden feature counts of the graph networks (output width 1 is implied).
    pub gnn_features: Vec<usize>,
    /// Number of one-hop exchanges per graph filter.
    pub gnn_order: usize,
    /// Number of square layers after the input map of the invertible transform.
    pub psi_layers: usize,
    pub parametrization: Parametrization,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            mlp_hidden: vec![256, 512, 1024],
            rnn_hidden: 1024,
            gnn_features: vec![256, 512, 1024],
            gnn_order: 3,
            psi_layers: 9,
            parametrization: Parametrization::Anchored,
        }
    }
}

impl ArchConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        if scenario == Scenario::Sir {
            Self { mlp_hidden: vec![512, 256, 128, 32], rnn_hidden: 2048, psi_layers: 10, ..Self::default() }
        } else {
            Self::default()
        }
    }
}

pub trait Architecture {
    fn family(&self) -> &'static str;

    /// Fresh parameters for a horizon of `horizon` steps after `t = 0`.
    fn init(&self, model: &ModelSpec, horizon: usize, rng: &mut Rng) -> Result<ParamStore>;

    fn memory_len(&self) -> usize {
        0
    }

    fn noise_kind(&self) -> NoiseKind {
        NoiseKind::StdNormal
    }

    /// Output bias of the kernel embedding, if it is one vector over states.
    fn embedding_bias(&self) -> Option<String> {
        None
    }

    /// Samples `x_t` for every row of `x_prev` from the fixed `noise`.
    fn draw(
        &self,
        tape: &mut Tape,
        ctx: &StepCtx,
        t: usize,
        x_prev: Var,
        memory: Option<Var>,
        y: &[f64],
        noise: &Matrix,
    ) -> Result<Draw>;
}

/// Spacing of the initial embedding offsets; `exp(−9)` keeps the initial
/// kernel matrix close to the identity.
pub const EMBEDDING_SPREAD: f64 = 3.0;

/// Sets the bias `name` (1 × N) to `0, s, 2s, ..` so that the kernel
/// covariance starts well conditioned instead of near rank one.
pub fn spread_embedding_bias(store: &mut ParamStore, name: &str) -> Result<()> {
    let id = store.id(name)?;
    for (i, v) in store.value_mut(id).as_mut_slice().iter_mut().enumerate() {
        *v = EMBEDDING_SPREAD / OUTPUT_GAIN * i as f64;
    }
    Ok(())
}

/// Output activation of the mean and representation networks.
pub fn output_activation(frame: &Frame) -> crate::numerics::Activation {
    match frame.mode {
        Parametrization::Anchored => crate::numerics::Activation::Identity,
        Parametrization::Plain => crate::numerics::Activation::Tanh,
    }
}

/// `x_k = μ_k + L_k u_k` with `L_k L_kᵀ = s·C K(z_k) Cᵀ + jitter·I`, per
/// particle. `mean` and `z` are K × N, `c` is N × N.
pub fn gaussian_head(
    tape: &mut Tape,
    frame: &Frame,
    mean: Var,
    z: Var,
    c: Var,
    noise: &Matrix,
) -> Result<(Var, Vec<f64>)> {
    let (k, n) = tape.value(mean).shape();
    let z = frame.embedding(tape, z);
    let scale = frame.cov_scale();
    let mut rows = Vec::with_capacity(k);
    let mut log_q = Vec::with_capacity(k);
    for p in 0..k {
        let zk = tape.row(z, p)?;
        let kern = tape.kernel_matrix(zk)?;
        let ck = tape.matmul(c, kern)?;
        let mut cov = tape.matmul_t(ck, c)?;
        if scale != 1.0 {
            cov = tape.scale(cov, scale);
        }
        let jitter = head_jitter(tape.value(cov));
        let cov = tape.add_diag(cov, jitter)?;
        let l = tape.cholesky(cov)?;
        let u = noise.row(p);
        let uk = tape.constant(Matrix::row_vector(u));
        rows.push(tape.matmul_t(uk, l)?);
        let lv = tape.value(l);
        let half_log_det: f64 = (0..n).map(|i| lv[(i, i)].ln()).sum();
        log_q.push(-0.5 * u.iter().map(|v| v * v).sum::<f64>() - half_log_det - n as f64 * HALF_LN_2PI);
    }
    let offsets = tape.stack_rows(&rows)?;
    let sample = tape.add(mean, offsets)?;
    Ok((sample, log_q))
}
