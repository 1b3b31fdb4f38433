//! Unsupervised training of learnable proposals from measurements alone.
//!
//! Each epoch rolls `K` reparametrized particles through the whole
//! measurement sequence on one tape, sums the negative log joint density
//! `−Σ_t Σ_k [log p(x_t|x_{t−1}) + log p(y_t|x_t)]` of the drawn particles,
//! and takes one Adam step. Resampling happens exactly as in the filter but
//! only re-indexes rows, so no gradient flows through ancestor choice.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::adam::{clip_global_norm, AdamState};
use crate::numerics::{Matrix, Rng, Tape, Var};
use crate::pf::{effective_sample_size, multinomial_indices, normalize_weights, DEFAULT_THRESHOLD};
use crate::proposals::{LearnedProposal, StepCtx, DENSITY_FLOOR};
use crate::ssm::ModelSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Particles rolled out per epoch.
    pub particles: usize,
    pub clip_norm: f64,
    pub threshold_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            particles: 10,
            clip_norm: 10.0,
            threshold_ratio: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.particles == 0 {
            return Err(Error::Config("training needs at least one particle".into()));
        }
        if !(self.threshold_ratio > 0.0 && self.threshold_ratio <= 1.0) {
            return Err(Error::Config(format!("threshold ratio {} outside (0, 1]", self.threshold_ratio)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub floor_hits: Vec<usize>,
    pub wall_clock: Duration,
    pub checksum: u64,
}

impl TrainReport {
    /// CSV with header `epoch,loss,grad_norm,floor_hits`.
    pub fn write_log(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "loss", "grad_norm", "floor_hits"])?;
        for (e, ((l, g), f)) in self.losses.iter().zip(&self.grad_norms).zip(&self.floor_hits).enumerate() {
            out.write_record([e.to_string(), format!("{l:e}"), format!("{g:e}"), f.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `−Σ_k [log p(x_k | x_prev_k) + log p(y | x_k)]` on the tape. Densities
/// that are zero are replaced by the density floor; the second value counts
/// such replacements.
pub fn step_loss(tape: &mut Tape, model: &ModelSpec, x: Var, x_prev: Var, y: &[f64]) -> Result<(Var, usize)> {
    let terms = step_terms(tape, model, x, x_prev, y)?;
    Ok((terms.loss, terms.floor_hits))
}

struct StepTerms {
    loss: Var,
    floor_hits: usize,
    /// Floored `log p(x_k | x_prev_k) + log p(y | x_k)` per particle.
    log_joint: Vec<f64>,
}

fn step_terms(tape: &mut Tape, model: &ModelSpec, x: Var, x_prev: Var, y: &[f64]) -> Result<StepTerms> {
    let k = tape.value(x).rows();
    if y.len() != model.m {
        return Err(dim_err!("measurement of length {} for M={}", y.len(), model.m));
    }
    let floor = DENSITY_FLOOR.ln();
    let drift = model.drift_on_tape(tape, x_prev)?;
    let r_state = tape.sub(x, drift)?;
    let c = tape.constant(model.c.clone());
    let pred = tape.matmul_t(x, c)?;
    let yv = tape.constant(Matrix::row_vector(y));
    let ys = tape.tile_rows(yv, k);
    let r_meas = tape.sub(ys, pred)?;
    let mut floor_hits = 0;
    for (r, law) in [(r_state, &model.state_noise), (r_meas, &model.measurement_noise)] {
        floor_hits += tape.value(r).as_slice().iter().filter(|v| !law.logpdf_component(**v).is_finite()).count();
    }
    let lp_state = tape.pointwise(r_state, model.state_noise.floored_logpdf_fn(floor));
    let lp_meas = tape.pointwise(r_meas, model.measurement_noise.floored_logpdf_fn(floor));
    let log_joint = (0..k)
        .map(|p| tape.value(lp_state).row(p).iter().sum::<f64>() + tape.value(lp_meas).row(p).iter().sum::<f64>())
        .collect();
    let s1 = tape.sum(lp_state);
    let s2 = tape.sum(lp_meas);
    let total = tape.add(s1, s2)?;
    Ok(StepTerms { loss: tape.scale(total, -1.0), floor_hits, log_joint })
}

/// Loss of one rollout together with its floor count; shared by training
/// and the gradient checks.
pub struct Rollout {
    pub loss: Var,
    pub floor_hits: usize,
}

/// Rolls `K` particles through `measurements` on `tape`. Noise and
/// resampling use streams derived from `rng`. Weights use the same floored
/// densities as the loss, so an ensemble that has left the support is still
/// ranked and resampled instead of drifting freely.
pub fn rollout(
    tape: &mut Tape,
    proposal: &LearnedProposal,
    model: &ModelSpec,
    measurements: &[Vec<f64>],
    k: usize,
    threshold_ratio: f64,
    rng: &Rng,
) -> Result<Rollout> {
    let ctx = StepCtx::new(model, &proposal.frame);
    let arch = proposal.arch.as_ref();
    let mut init_rng = rng.substream(0);
    let mut x0 = Matrix::zeros(k, model.n);
    for p in 0..k {
        x0.row_mut(p).copy_from_slice(&model.initial.sample(&mut init_rng));
    }
    let floor = DENSITY_FLOOR.ln();
    let mut log_w: Vec<f64> = (0..k)
        .map(|p| {
            let r: Vec<f64> = model.c.matvec(x0.row(p)).map(|cx| measurements[0].iter().zip(&cx).map(|(y, v)| y - v).collect())?;
            Ok(r.iter().map(|v| model.measurement_noise.logpdf_component(*v).max(floor)).sum())
        })
        .collect::<Result<_>>()?;
    let mut x = tape.constant(x0);
    let mem_len = arch.memory_len();
    let mut memory = (mem_len > 0).then(|| tape.constant(Matrix::zeros(k, mem_len)));
    let mut losses: Vec<Var> = Vec::new();
    let mut hits = 0;
    for t in 0..measurements.len() {
        if t > 0 {
            let y = &measurements[t];
            let mut step_rng = rng.substream(t as u64);
            let noise = arch.noise_kind().draw(k, model.n, &mut step_rng);
            let draw = arch.draw(tape, &ctx, t, x, memory, y, &noise)?;
            let terms = step_terms(tape, model, draw.sample, x, y)?;
            losses.push(terms.loss);
            hits += terms.floor_hits;
            for (p, lw) in log_w.iter_mut().enumerate() {
                *lw += terms.log_joint[p] - draw.log_q[p];
            }
            x = draw.sample;
            memory = draw.memory.or(memory);
        }
        let w = normalize_weights(&log_w).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("rollout weights at t={t}: {m}")),
            other => other,
        })?;
        if effective_sample_size(&w) < threshold_ratio * k as f64 {
            let idx = multinomial_indices(&w, &mut rng.substream((1 << 40) + t as u64));
            x = tape.gather_rows(x, &idx)?;
            memory = match memory {
                Some(m) => Some(tape.gather_rows(m, &idx)?),
                None => None,
            };
            log_w = vec![0.0; k];
        } else {
            let lse = crate::pf::log_sum_exp(&log_w);
            log_w.iter_mut().for_each(|v| *v -= lse);
        }
    }
    let loss = match losses.split_first() {
        None => tape.constant(Matrix::zeros(1, 1)),
        Some((first, rest)) => {
            let mut acc = *first;
            for l in rest {
                acc = tape.add(acc, *l)?;
            }
            acc
        }
    };
    Ok(Rollout { loss, floor_hits: hits })
}

/// Trains `proposal` in place. Only measurements are consumed.
pub fn train(
    model: &ModelSpec,
    measurements: &[Vec<f64>],
    proposal: &mut LearnedProposal,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if measurements.is_empty() {
        return Err(Error::Config("training needs at least one measurement".into()));
    }
    let start = Instant::now();
    let mut adam = AdamState::new(&proposal.params, config.lr, config.beta1, config.beta2, config.eps);
    let mut report = TrainReport {
        losses: Vec::with_capacity(config.epochs),
        grad_norms: Vec::with_capacity(config.epochs),
        floor_hits: Vec::with_capacity(config.epochs),
        wall_clock: Duration::ZERO,
        checksum: 0,
    };
    for epoch in 0..config.epochs {
        let rng = Rng::derive(config.seed, &[epoch as u64]);
        let (loss, hits, mut grads) = {
            let mut tape = Tape::with_params(&proposal.params);
            let out = rollout(&mut tape, proposal, model, measurements, config.particles, config.threshold_ratio, &rng)
                .map_err(|e| at_epoch(e, epoch))?;
            let loss = tape.scalar(out.loss);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss is {loss} at epoch {epoch} ({} density floor hits)",
                    out.floor_hits
                )));
            }
            (loss, out.floor_hits, tape.backward(out.loss)?.into_params())
        };
        let norm = clip_global_norm(&mut grads, config.clip_norm);
        adam.step(&mut proposal.params, &grads).map_err(|e| at_epoch(e, epoch))?;
        log::debug!("epoch {epoch}: loss {loss:.6e}, grad norm {norm:.3e}, floor hits {hits}");
        report.losses.push(loss);
        report.grad_norms.push(norm);
        report.floor_hits.push(hits);
    }
    report.wall_clock = start.elapsed();
    report.checksum = proposal.params.checksum();
    proposal.params.set_meta("family", proposal.arch.family());
    proposal.params.set_meta("parametrization", proposal.frame.mode.to_string());
    proposal.params.set_meta("objective", "sum of per-particle log joint densities");
    proposal.params.set_meta("epochs", config.epochs.to_string());
    Ok(report)
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}: {m}")),
        other => other,
    }
}
