use std::io::Write;

use super::ensemble::{effective_sample_size, estimate, log_sum_exp, resample, ParticleEnsemble};
use super::proposal::{Proposal, Weighting};
use crate::error::{dim_err, Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::ssm::ModelSpec;

/// Resampling threshold used throughout: resample when ESS < K/3.
pub const DEFAULT_THRESHOLD: f64 = 1.0 / 3.0;

const RESAMPLE_STREAM: u64 = 1 << 40;

/// Per-step record of a filter run.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput {
    pub estimates: Vec<Vec<f64>>,
    pub ess: Vec<f64>,
    pub resampled: Vec<bool>,
    /// Running estimate of `log p(y_{0:T})`.
    pub log_likelihood: f64,
}

impl FilterOutput {
    /// CSV with header `t,ess,resampled,estimate_1..estimate_N`.
    pub fn write_diagnostics(&self, w: impl Write) -> Result<()> {
        let n = self.estimates.first().map_or(0, Vec::len);
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "ess".into(), "resampled".into()];
        header.extend((1..=n).map(|i| format!("estimate_{i}")));
        out.write_record(&header)?;
        for (t, est) in self.estimates.iter().enumerate() {
            let mut rec = vec![t.to_string(), format!("{:e}", self.ess[t]), u8::from(self.resampled[t]).to_string()];
            rec.extend(est.iter().map(|v| format!("{v:e}")));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Particles drawn from the initial law and weighted by `p(y_0 | x_0)`.
pub fn initialize(model: &ModelSpec, y0: &[f64], k: usize, memory_len: usize, rng: &mut Rng) -> ParticleEnsemble {
    let mut states = Matrix::zeros(k, model.n);
    for p in 0..k {
        let x = model.initial.sample(rng);
        states.row_mut(p).copy_from_slice(&x);
    }
    let mut ens = ParticleEnsemble::new(states, Matrix::zeros(k, memory_len), 0);
    for p in 0..k {
        ens.log_weights[p] += model.measurement_logpdf(ens.states.row(p), y0);
    }
    ens
}

/// One importance-sampling step from `t−1` to `t`. Returns the incremental
/// log-weights.
pub fn sis_step(
    ensemble: &mut ParticleEnsemble,
    proposal: &dyn Proposal,
    model: &ModelSpec,
    y: &[f64],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if y.len() != model.m {
        return Err(dim_err!("measurement of length {} for M={}", y.len(), model.m));
    }
    let t = ensemble.t + 1;
    let draw = proposal.propose(model, t, &ensemble.states, &ensemble.memory, y, rng)?;
    let k = ensemble.len();
    if draw.states.shape() != ensemble.states.shape() || draw.log_q.len() != k {
        return Err(dim_err!("proposal returned {:?} states for {k} particles", draw.states.shape()));
    }
    for p in 0..k {
        if draw.states.row(p).iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("proposal produced a non-finite state for particle {p} at t={t}")));
        }
    }
    let inc: Vec<f64> = match draw.weighting {
        Weighting::Increment(v) => v,
        Weighting::ImportanceRatio => (0..k)
            .map(|p| {
                let x = draw.states.row(p);
                let lp = model.measurement_logpdf(x, y) + model.transition_logpdf(ensemble.states.row(p), x);
                if lp == f64::NEG_INFINITY {
                    lp
                } else {
                    lp - draw.log_q[p]
                }
            })
            .collect(),
    };
    for (lw, d) in ensemble.log_weights.iter_mut().zip(&inc) {
        *lw += d;
    }
    ensemble.states = draw.states;
    ensemble.memory = draw.memory;
    ensemble.t = t;
    Ok(inc)
}

/// Runs the filter over `measurements[0..=T]`, resampling whenever
/// ESS < `threshold_ratio`·K. The estimate at each step is taken before
/// resampling.
pub fn run_filter(
    model: &ModelSpec,
    proposal: &dyn Proposal,
    measurements: &[Vec<f64>],
    k: usize,
    threshold_ratio: f64,
    rng: &Rng,
) -> Result<FilterOutput> {
    if k == 0 {
        return Err(Error::Config("particle count must be positive".into()));
    }
    if !(threshold_ratio > 0.0 && threshold_ratio <= 1.0) {
        return Err(Error::Config(format!("threshold ratio {threshold_ratio} outside (0, 1]")));
    }
    let Some(y0) = measurements.first() else {
        return Err(Error::Config("no measurements".into()));
    };
    if let Some((t, y)) = measurements.iter().enumerate().find(|(_, y)| y.len() != model.m) {
        return Err(Error::Dimension(format!("measurement {t} has length {}, model expects {}", y.len(), model.m)));
    }
    let mut ens = initialize(model, y0, k, proposal.memory_len(), &mut rng.substream(0));
    let mut out = FilterOutput { estimates: Vec::new(), ess: Vec::new(), resampled: Vec::new(), log_likelihood: 0.0 };
    let mut prev_lse = 0.0;
    for t in 0..measurements.len() {
        if t > 0 {
            sis_step(&mut ens, proposal, model, &measurements[t], &mut rng.substream(t as u64))?;
        }
        let lse = log_sum_exp(&ens.log_weights);
        let w = ens.weights()?;
        out.log_likelihood += lse - prev_lse;
        let ess = effective_sample_size(&w);
        out.estimates.push(estimate(&ens, &w));
        out.ess.push(ess);
        let do_resample = ess < threshold_ratio * k as f64;
        out.resampled.push(do_resample);
        if do_resample {
            resample(&mut ens, &w, &mut rng.substream(RESAMPLE_STREAM + t as u64));
        } else {
            let shift = log_sum_exp(&ens.log_weights);
            ens.log_weights.iter_mut().for_each(|v| *v -= shift);
        }
        prev_lse = log_sum_exp(&ens.log_weights);
    }
    Ok(out)
}
