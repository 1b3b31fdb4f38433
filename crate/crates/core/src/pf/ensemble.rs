use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// `K` particles stored as the rows of `states`, with log-weights and one
/// row of proposal memory per particle.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub states: Matrix,
    pub log_weights: Vec<f64>,
    pub memory: Matrix,
    pub t: usize,
}

impl ParticleEnsemble {
    /// Uniformly weighted ensemble.
    pub fn new(states: Matrix, memory: Matrix, t: usize) -> Self {
        let k = states.rows();
        Self { log_weights: vec![-(k as f64).ln(); k], states, memory, t }
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        normalize_weights(&self.log_weights).map_err(|e| match e {
            Error::Degeneracy { .. } => Error::Degeneracy { t: self.t },
            other => other,
        })
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `exp(lw_k - logsumexp(lw))`.
pub fn normalize_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Numerical("log-weight is NaN or +inf".into()));
    }
    let lse = log_sum_exp(log_weights);
    if !lse.is_finite() {
        return Err(Error::Degeneracy { t: 0 });
    }
    let mut w: Vec<f64> = log_weights.iter().map(|v| (v - lse).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    Ok(w)
}

/// `1 / Σ w_k²` for normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// `K` multinomial draws from `weights`, returned in ascending order.
pub fn multinomial_indices(weights: &[f64], rng: &mut Rng) -> Vec<usize> {
    let k = weights.len();
    let mut u: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
    u.sort_by(f64::total_cmp);
    let cum: Vec<f64> = weights
        .iter()
        .scan(0.0, |s, w| {
            *s += w;
            Some(*s)
        })
        .collect();
    // rounding can leave the total just below a draw; fall back to the last
    // particle that has mass
    let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(k - 1);
    let mut out = Vec::with_capacity(k);
    let mut j = 0;
    for ui in u {
        while j < k && cum[j] <= ui {
            j += 1;
        }
        out.push(if j < k { j } else { last });
    }
    out
}

/// Multinomial resampling; states and memories follow their ancestors and
/// weights are reset to `1/K`. Returns the ancestor indices.
pub fn resample(ensemble: &mut ParticleEnsemble, weights: &[f64], rng: &mut Rng) -> Vec<usize> {
    let idx = multinomial_indices(weights, rng);
    ensemble.states = gather(&ensemble.states, &idx);
    ensemble.memory = gather(&ensemble.memory, &idx);
    let k = idx.len();
    ensemble.log_weights = vec![-(k as f64).ln(); k];
    idx
}

pub(crate) fn gather(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (i, &r) in idx.iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.row(r));
    }
    out
}

/// Weighted mean of the current states.
pub fn estimate(ensemble: &ParticleEnsemble, weights: &[f64]) -> Vec<f64> {
    estimate_with(ensemble, weights, |x| x.to_vec())
}

/// `Σ_k w_k f(x_k)`.
pub fn estimate_with(ensemble: &ParticleEnsemble, weights: &[f64], f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    for (k, w) in weights.iter().enumerate() {
        let v = f(ensemble.states.row(k));
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, b) in acc.iter_mut().zip(v) {
            *a += w * b;
        }
    }
    acc
}
