//! The sampling-distribution interface and the two designed proposals.

use crate::error::Result;
use crate::numerics::matrix::{cholesky, solve_lower};
use crate::numerics::{Matrix, Rng};
use crate::proposals::gaussian::{head_jitter, HALF_LN_2PI};
use crate::ssm::ModelSpec;

/// How the incremental log-weight of a fresh draw is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum Weighting {
    /// `log p(y|x) + log p(x|x_prev) − log π(x)`.
    ImportanceRatio,
    /// Closed-form increments that the proposal already knows.
    Increment(Vec<f64>),
}

/// One draw for every particle.
#[derive(Clone, Debug)]
pub struct ProposalDraw {
    pub states: Matrix,
    pub log_q: Vec<f64>,
    pub memory: Matrix,
    pub weighting: Weighting,
}

pub trait Proposal {
    fn name(&self) -> &str;

    /// Width of the per-particle memory row.
    fn memory_len(&self) -> usize {
        0
    }

    /// Samples `x_t` for every row of `x_prev` given `y_t`.
    fn propose(
        &self,
        model: &ModelSpec,
        t: usize,
        x_prev: &Matrix,
        memory: &Matrix,
        y: &[f64],
        rng: &mut Rng,
    ) -> Result<ProposalDraw>;

    /// Key/value notes recorded in run metadata.
    fn notes(&self, _model: &ModelSpec) -> Vec<(String, String)> {
        Vec::new()
    }
}

/// Samples from the transition prior; the increment is the measurement
/// likelihood.
#[derive(Clone, Copy, Debug, Default)]
pub struct Bootstrap;

impl Proposal for Bootstrap {
    fn name(&self) -> &str {
        "bootstrap"
    }

    fn propose(
        &self,
        model: &ModelSpec,
        _t: usize,
        x_prev: &Matrix,
        memory: &Matrix,
        y: &[f64],
        rng: &mut Rng,
    ) -> Result<ProposalDraw> {
        let mut states = model.drift_rows(x_prev);
        let mut log_q = Vec::with_capacity(states.rows());
        let mut inc = Vec::with_capacity(states.rows());
        for k in 0..states.rows() {
            let row = states.row_mut(k);
            let mut lq = 0.0;
            for v in row.iter_mut() {
                let e = model.state_noise.draw(rng);
                *v += e;
                lq += model.state_noise.logpdf_component(e);
            }
            log_q.push(lq);
            inc.push(model.measurement_logpdf(states.row(k), y));
        }
        Ok(ProposalDraw { states, log_q, memory: memory.clone(), weighting: Weighting::Increment(inc) })
    }
}

/// The Gaussian conditional `p(x_t | x_{t−1}, y_t)`.
///
/// Exact when both noise laws are Gaussian, whatever the nonlinearity.
/// Otherwise the same formulas, including the Gaussian predictive weight
/// increment, are used with moment-matched Gaussian noise.
#[derive(Clone, Debug)]
pub struct MinDegeneracy {
    cov: Matrix,
    chol: Matrix,
    half_log_det: f64,
    pred_chol: Matrix,
    pred_half_log_det: f64,
    inv_sv2: f64,
    ct_scaled: Matrix,
    exact: bool,
}

impl MinDegeneracy {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        let (n, m) = (model.n, model.m);
        let sv2 = model.state_noise.variance;
        let sw2 = model.measurement_noise.variance;
        let ctc = model.c.t_matmul(&model.c)?;
        let precision = ctc.scale(1.0 / sw2).add_diagonal(1.0 / sv2);
        let cov = precision.inverse()?.symmetrized();
        let (chol, _) = cholesky(&cov, 0.0).or_else(|_| cholesky(&cov, head_jitter(&cov)))?;
        let pred = model.c.matmul_t(&model.c)?.scale(sv2).add_diagonal(sw2);
        let (pred_chol, _) = cholesky(&pred, 0.0)?;
        let hld = |l: &Matrix, d: usize| (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        Ok(Self {
            half_log_det: hld(&chol, n),
            pred_half_log_det: hld(&pred_chol, m),
            cov,
            chol,
            pred_chol,
            inv_sv2: 1.0 / sv2,
            ct_scaled: model.c.transpose().scale(1.0 / sw2),
            exact: model.state_noise.is_gaussian() && model.measurement_noise.is_gaussian(),
        })
    }

    pub fn covariance(&self) -> &Matrix {
        &self.cov
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// Conditional mean given the propagated mean `φ(A x_prev)`.
    pub fn mean(&self, drift: &[f64], y: &[f64]) -> Vec<f64> {
        let cty = self.ct_scaled.matvec(y).expect("matching dimension");
        let rhs: Vec<f64> = drift.iter().zip(cty).map(|(d, c)| d * self.inv_sv2 + c).collect();
        self.cov.matvec(&rhs).expect("matching dimension")
    }

    /// `log N(y; C φ(A x_prev), σ_v² C Cᵀ + σ_w² I)`.
    pub fn predictive_logpdf(&self, model: &ModelSpec, drift: &[f64], y: &[f64]) -> f64 {
        let pred = model.c.matvec(drift).expect("matching dimension");
        let r: Vec<f64> = y.iter().zip(pred).map(|(a, b)| a - b).collect();
        let z = solve_lower(&self.pred_chol, &r);
        -0.5 * z.iter().map(|v| v * v).sum::<f64>() - self.pred_half_log_det - model.m as f64 * HALF_LN_2PI
    }
}

impl Proposal for MinDegeneracy {
    fn name(&self) -> &str {
        "min-degeneracy"
    }

    fn propose(
        &self,
        model: &ModelSpec,
        _t: usize,
        x_prev: &Matrix,
        memory: &Matrix,
        y: &[f64],
        rng: &mut Rng,
    ) -> Result<ProposalDraw> {
        let drift = model.drift_rows(x_prev);
        let (k, n) = (x_prev.rows(), model.n);
        let mut states = Matrix::zeros(k, n);
        let mut log_q = Vec::with_capacity(k);
        let mut inc = Vec::with_capacity(k);
        let mut u = vec![0.0; n];
        for p in 0..k {
            let mu = self.mean(drift.row(p), y);
            rng.fill_normal(&mut u);
            let lu = self.chol.matvec(&u)?;
            for ((o, m), d) in states.row_mut(p).iter_mut().zip(&mu).zip(lu) {
                *o = m + d;
            }
            log_q.push(-0.5 * u.iter().map(|v| v * v).sum::<f64>() - self.half_log_det - n as f64 * HALF_LN_2PI);
            inc.push(self.predictive_logpdf(model, drift.row(p), y));
        }
        Ok(ProposalDraw { states, log_q, memory: memory.clone(), weighting: Weighting::Increment(inc) })
    }

    fn notes(&self, model: &ModelSpec) -> Vec<(String, String)> {
        let mode = if MinDegeneracy::new(model).map(|p| p.exact).unwrap_or(false) {
            "exact"
        } else {
            "gaussian-surrogate"
        };
        vec![("min_degeneracy".into(), mode.into())]
    }
}
