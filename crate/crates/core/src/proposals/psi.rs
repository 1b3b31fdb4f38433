//! Invertible transform of uniform noise.
//!
//! `z_0 = tanh(A u + B x_{t−1} + C y_t)`, `z_ℓ = tanh(W_ℓ z_{ℓ−1} + b_ℓ)` for
//! `ℓ = 1..L`, and the sample is `z_L` (plain) or `φ(A x_{t−1}) + s ⊙ z_L`
//! (anchored, with `s = σ_v·exp(log_s)`). With `u` uniform on the unit cube
//! the density is the inverse Jacobian determinant.
//!
//! Parameters per step `t`: `psi.{t}.A|B|C`, `psi.{t}.{ℓ}.w|b` for
//! `ℓ = 0..L−1`, and `psi.{t}.log_s` when anchored.

use std::rc::Rc;

use super::arch::{Architecture, Draw, NoiseKind, StepCtx};
use super::DENSITY_FLOOR;
use crate::error::{Error, Result};
use crate::numerics::layers::glorot;
use crate::numerics::matrix::Lu;
use crate::numerics::{Activation, Matrix, ParamStore, Rng, Tape, Var};
use crate::ssm::ModelSpec;

/// Ridge added to `WᵀW` when inverting a layer.
pub const RIDGE: f64 = 1e-8;

/// Slack allowed when testing that a recovered `u` lies in the unit cube.
const CUBE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct Psi {
    pub layers: usize,
}

fn log_one_minus_sq(z: f64) -> f64 {
    (1.0 - z * z).max(f64::MIN_POSITIVE).ln()
}

fn near_identity(rng: &mut Rng, n: usize, diag: f64) -> Matrix {
    glorot(rng, n, n).scale(0.1).add_diagonal(diag)
}

impl Psi {
    fn scales(&self, store: &ParamStore, ctx: &StepCtx, t: usize) -> Result<Vec<f64>> {
        if !ctx.frame.is_anchored() {
            return Ok(vec![1.0; ctx.model.n]);
        }
        let ls = store.get(&format!("psi.{t}.log_s"))?;
        Ok(ls.as_slice().iter().map(|v| ctx.frame.sigma_v * v.exp()).collect())
    }

    /// `log |det A| + Σ_ℓ log |det W_ℓ|` at step `t`.
    fn log_det_linear(&self, store: &ParamStore, t: usize) -> Result<f64> {
        let mut s = Lu::new(store.get(&format!("psi.{t}.A"))?)?.log_abs_det();
        for l in 0..self.layers {
            s += Lu::new(store.get(&format!("psi.{t}.{l}.w"))?)?.log_abs_det();
        }
        Ok(s)
    }

    /// Deterministic map from `u` (one row) to a state.
    pub fn sample_with(
        &self,
        store: &ParamStore,
        ctx: &StepCtx,
        t: usize,
        x_prev: &[f64],
        y: &[f64],
        u: &[f64],
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::inference(store);
        let xp = tape.constant(Matrix::row_vector(x_prev));
        let d = self.draw(&mut tape, ctx, t, xp, None, y, &Matrix::row_vector(u))?;
        Ok(tape.value(d.sample).as_slice().to_vec())
    }

    /// `log π(x | x_{t−1}, y_t)` by inverting the transform layer by layer.
    /// Points outside the image of the unit cube get `ln(DENSITY_FLOOR)`.
    pub fn logpdf(
        &self,
        store: &ParamStore,
        ctx: &StepCtx,
        t: usize,
        x_prev: &[f64],
        y: &[f64],
        x: &[f64],
    ) -> Result<f64> {
        let floor = DENSITY_FLOOR.ln();
        let s = self.scales(store, ctx, t)?;
        let mut z: Vec<f64> = if ctx.frame.is_anchored() {
            let anchor = ctx.model.drift(x_prev);
            x.iter().zip(&anchor).zip(&s).map(|((xi, a), si)| (xi - a) / si).collect()
        } else {
            x.to_vec()
        };
        let mut log_jac = -s.iter().map(|v| v.ln()).sum::<f64>();
        for l in (0..self.layers).rev() {
            if z.iter().any(|v| v.abs() >= 1.0) {
                return Ok(floor);
            }
            log_jac -= z.iter().map(|v| log_one_minus_sq(*v)).sum::<f64>();
            let w = store.get(&format!("psi.{t}.{l}.w"))?;
            let b = store.get(&format!("psi.{t}.{l}.b"))?;
            let r: Vec<f64> = z.iter().zip(b.as_slice()).map(|(v, bb)| v.atanh() - bb).collect();
            log_jac -= Lu::new(w)?.log_abs_det();
            z = ridge_solve(w, &r)?;
        }
        if z.iter().any(|v| v.abs() >= 1.0) {
            return Ok(floor);
        }
        log_jac -= z.iter().map(|v| log_one_minus_sq(*v)).sum::<f64>();
        let a = store.get(&format!("psi.{t}.A"))?;
        let bm = store.get(&format!("psi.{t}.B"))?;
        let cm = store.get(&format!("psi.{t}.C"))?;
        let (xs, ys) = scaled_inputs(ctx, x_prev, y);
        let bx = bm.matvec(&xs)?;
        let cy = cm.matvec(&ys)?;
        let r: Vec<f64> = (0..z.len()).map(|i| z[i].atanh() - bx[i] - cy[i]).collect();
        let lu = Lu::new(a)?;
        if lu.log_abs_det() == f64::NEG_INFINITY {
            return Err(Error::Numerical(format!("input map of step {t} is singular")));
        }
        let u = lu.solve(&r)?;
        if u.iter().any(|v| *v < -CUBE_TOL || *v > 1.0 + CUBE_TOL) {
            return Ok(floor);
        }
        Ok(log_jac - lu.log_abs_det())
    }
}

fn scaled_inputs(ctx: &StepCtx, x_prev: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        x_prev.iter().map(|v| v / ctx.frame.x_scale).collect(),
        y.iter().map(|v| v / ctx.frame.y_scale).collect(),
    )
}

/// Solves `(WᵀW + εI) w = Wᵀ r`.
pub fn ridge_solve(w: &Matrix, r: &[f64]) -> Result<Vec<f64>> {
    let normal = w.t_matmul(w)?.add_diagonal(RIDGE);
    let rhs = w.t_matvec(r)?;
    let lu = Lu::new(&normal)?;
    if lu.log_abs_det() == f64::NEG_INFINITY {
        return Err(Error::Numerical("layer is singular even after the ridge".into()));
    }
    lu.solve(&rhs)
}

impl Architecture for Psi {
    fn family(&self) -> &'static str {
        "psi"
    }

    fn noise_kind(&self) -> NoiseKind {
        NoiseKind::Uniform01
    }

    fn init(&self, model: &ModelSpec, horizon: usize, rng: &mut Rng) -> Result<ParamStore> {
        let n = model.n;
        let mut store = ParamStore::new();
        for t in 1..=horizon {
            let rng = &mut rng.substream(t as u64);
            store.insert(format!("psi.{t}.A"), near_identity(rng, n, 1.0))?;
            store.insert(format!("psi.{t}.B"), glorot(rng, n, n).scale(0.1))?;
            store.insert(format!("psi.{t}.C"), glorot(rng, n, model.m).scale(0.1))?;
            for l in 0..self.layers {
                // Layer 0 recentres tanh(u), whose median is tanh(1/2).
                let (diag, bias) = if l == 0 { (2.0, -2.0 * 0.5f64.tanh()) } else { (1.0, 0.0) };
                store.insert(format!("psi.{t}.{l}.w"), near_identity(rng, n, diag))?;
                store.insert(format!("psi.{t}.{l}.b"), Matrix::filled(1, n, bias))?;
            }
            store.insert(format!("psi.{t}.log_s"), Matrix::filled(1, n, 4f64.ln()))?;
        }
        Ok(store)
    }

    fn draw(
        &self,
        tape: &mut Tape,
        ctx: &StepCtx,
        t: usize,
        x_prev: Var,
        _memory: Option<Var>,
        y: &[f64],
        noise: &Matrix,
    ) -> Result<Draw> {
        let k = noise.rows();
        let (xs, ys) = ctx.frame.inputs(tape, x_prev, y)?;
        let a = tape.param(&format!("psi.{t}.A"))?;
        let b = tape.param(&format!("psi.{t}.B"))?;
        let c = tape.param(&format!("psi.{t}.C"))?;
        let u = tape.constant(noise.clone());
        let au = tape.matmul_t(u, a)?;
        let bx = tape.matmul_t(xs, b)?;
        let cy = tape.matmul_t(ys, c)?;
        let pre = tape.add(au, bx)?;
        let pre = tape.add(pre, cy)?;
        let mut z = tape.tanh(pre);
        let mut log_q = vec![0.0; k];
        let charge = |tape: &Tape, z: Var, log_q: &mut [f64]| {
            let zv = tape.value(z);
            for (p, lq) in log_q.iter_mut().enumerate() {
                *lq -= zv.row(p).iter().map(|v| log_one_minus_sq(*v)).sum::<f64>();
            }
        };
        charge(tape, z, &mut log_q);
        for l in 0..self.layers {
            let w = tape.param(&format!("psi.{t}.{l}.w"))?;
            let bl = tape.param(&format!("psi.{t}.{l}.b"))?;
            z = tape.dense(z, w, Some(bl), Activation::Tanh)?;
            charge(tape, z, &mut log_q);
        }
        let store_ld = {
            let store = tape_store(tape)?;
            self.log_det_linear(store, t)?
        };
        let sample = if ctx.frame.is_anchored() {
            let ls = tape.param(&format!("psi.{t}.log_s"))?;
            let exp = tape.pointwise(ls, Rc::new(|v: f64| (v.exp(), v.exp())));
            let s = tape.scale(exp, ctx.frame.sigma_v);
            let log_s: f64 = tape.value(s).as_slice().iter().map(|v| v.ln()).sum();
            log_q.iter_mut().for_each(|v| *v -= log_s);
            let s = tape.tile_rows(s, k);
            let step = tape.mul(z, s)?;
            let anchor = ctx.model.drift_on_tape(tape, x_prev)?;
            tape.add(anchor, step)?
        } else {
            z
        };
        log_q.iter_mut().for_each(|v| *v -= store_ld);
        Ok(Draw { sample, memory: None, log_q })
    }
}

fn tape_store<'a>(tape: &Tape<'a>) -> Result<&'a ParamStore> {
    tape.store().ok_or_else(|| Error::Store("tape has no parameter store".into()))
}
