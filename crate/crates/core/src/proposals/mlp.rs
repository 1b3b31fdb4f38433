//! Unrolled fully connected mean networks with a shared kernel covariance.
//!
//! Parameters: `mu.{t}.{i}.w|b` for each step `t ≥ 1`, shared
//! `sigma.{i}.w|b`, and the shared mixing matrix `C`.

use super::arch::{gaussian_head, output_activation, Architecture, Draw, StepCtx};
use crate::error::Result;
use crate::numerics::layers::{init_mlp, mlp_on_tape};
use crate::numerics::{Matrix, ParamStore, Rng, Tape, Var};
use crate::ssm::ModelSpec;

#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Vec<usize>,
}

impl Mlp {
    fn sizes(&self, model: &ModelSpec) -> Vec<usize> {
        let mut s = vec![model.n + model.m];
        s.extend(&self.hidden);
        s.push(model.n);
        s
    }

    fn depth(&self) -> usize {
        self.hidden.len() + 1
    }
}

impl Architecture for Mlp {
    fn family(&self) -> &'static str {
        "mlp"
    }

    fn init(&self, model: &ModelSpec, horizon: usize, rng: &mut Rng) -> Result<ParamStore> {
        let sizes = self.sizes(model);
        let mut store = ParamStore::new();
        for t in 1..=horizon {
            init_mlp(&mut store, &format!("mu.{t}"), &sizes, &mut rng.substream(t as u64))?;
        }
        init_mlp(&mut store, "sigma", &sizes, &mut rng.substream(0))?;
        store.insert("C", Matrix::identity(model.n))?;
        Ok(store)
    }

    fn embedding_bias(&self) -> Option<String> {
        Some(format!("sigma.{}.b", self.depth() - 1))
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
        let (xs, ys) = ctx.frame.inputs(tape, x_prev, y)?;
        let input = tape.concat_cols(&[xs, ys])?;
        let act = output_activation(ctx.frame);
        let net_mu = mlp_on_tape(tape, &format!("mu.{t}"), self.depth(), input, act)?;
        let z = mlp_on_tape(tape, "sigma", self.depth(), input, act)?;
        let mean = ctx.frame.place_mean(tape, ctx.model, x_prev, net_mu)?;
        let c = tape.param("C")?;
        let (sample, log_q) = gaussian_head(tape, ctx.frame, mean, z, c, noise)?;
        Ok(Draw { sample, memory: None, log_q })
    }
}
