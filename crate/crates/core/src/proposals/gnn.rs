//! Graph convolutional proposal over the transition graph.
//!
//! Node features start as `[x_{t−1}, A_t y_t]` (N × 2) and pass through
//! polynomial graph filters with per-layer bias. Parameters: per step
//! `mu.{t}.adapt` (N × M), `mu.{t}.{layer}.{d}` taps and `mu.{t}.{layer}.b`;
//! shared `sigma.adapt`, `sigma.{layer}.{d}`, `sigma.{layer}.b`, the
//! per-node embedding offset `sigma.offset` (1 × N), and `C`.

use super::arch::{gaussian_head, output_activation, Architecture, Draw, StepCtx};
use crate::error::{dim_err, Result};
use crate::numerics::layers::{glorot, graph_filter_on_tape, init_graph_filter};
use crate::numerics::{Activation, Matrix, ParamStore, Rng, Tape, Var};
use crate::ssm::ModelSpec;

#[derive(Clone, Debug)]
pub struct Gnn {
    /// Hidden feature counts; the input has 2 features and the output 1.
    pub features: Vec<usize>,
    pub order: usize,
}

impl Gnn {
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![2];
        w.extend(&self.features);
        w.push(1);
        w
    }

    fn init_branch(&self, store: &mut ParamStore, prefix: &str, model: &ModelSpec, rng: &mut Rng) -> Result<()> {
        store.insert(format!("{prefix}.adapt"), glorot(rng, model.n, model.m))?;
        for (l, pair) in self.widths().windows(2).enumerate() {
            init_graph_filter(store, &format!("{prefix}.{l}"), self.order, pair[0], pair[1], rng)?;
            store.insert(format!("{prefix}.{l}.b"), Matrix::zeros(1, pair[1]))?;
        }
        Ok(())
    }

    fn branch(
        &self,
        tape: &mut Tape,
        ctx: &StepCtx,
        prefix: &str,
        xs: Var,
        ys_row: Var,
        out_act: Activation,
    ) -> Result<Var> {
        let (k, n) = tape.value(xs).shape();
        let adapt = tape.param(&format!("{prefix}.adapt"))?;
        let ay = tape.matmul_t(ys_row, adapt)?;
        let ay = tape.reshape(ay, n, 1)?;
        let ay = tape.tile_rows(ay, k);
        let xcol = tape.reshape(xs, k * n, 1)?;
        let mut h = tape.concat_cols(&[xcol, ay])?;
        let layers = self.widths().len() - 1;
        for l in 0..layers {
            h = graph_filter_on_tape(tape, &format!("{prefix}.{l}"), self.order, &ctx.shift, h)?;
            let b = tape.param(&format!("{prefix}.{l}.b"))?;
            h = tape.add_row(h, b)?;
            let act = if l + 1 == layers { out_act } else { Activation::Tanh };
            h = match act {
                Activation::Tanh => tape.tanh(h),
                Activation::Sigmoid => tape.sigmoid(h),
                Activation::Identity => h,
            };
        }
        tape.reshape(h, k, n)
    }
}

impl Architecture for Gnn {
    fn family(&self) -> &'static str {
        "gnn"
    }

    fn init(&self, model: &ModelSpec, horizon: usize, rng: &mut Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for t in 1..=horizon {
            self.init_branch(&mut store, &format!("mu.{t}"), model, &mut rng.substream(t as u64))?;
        }
        self.init_branch(&mut store, "sigma", model, &mut rng.substream(0))?;
        store.insert("sigma.offset", Matrix::zeros(1, model.n))?;
        store.insert("C", Matrix::identity(model.n))?;
        Ok(store)
    }

    fn embedding_bias(&self) -> Option<String> {
        Some("sigma.offset".into())
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
        let n = ctx.model.n;
        if ctx.shift.shape() != (n, n) {
            return Err(dim_err!("graph shift {:?} for N={n}", ctx.shift.shape()));
        }
        let (xs, _) = ctx.frame.inputs(tape, x_prev, y)?;
        let yrow: Vec<f64> = y.iter().map(|v| v / ctx.frame.y_scale).collect();
        let ys_row = tape.constant(Matrix::row_vector(&yrow));
        let act = output_activation(ctx.frame);
        let net_mu = self.branch(tape, ctx, &format!("mu.{t}"), xs, ys_row, act)?;
        let z = self.branch(tape, ctx, "sigma", xs, ys_row, act)?;
        let offset = tape.param("sigma.offset")?;
        let z = tape.add_row(z, offset)?;
        let mean = ctx.frame.place_mean(tape, ctx.model, x_prev, net_mu)?;
        let c = tape.param("C")?;
        let (sample, log_q) = gaussian_head(tape, ctx.frame, mean, z, c, noise)?;
        Ok(Draw { sample, memory: None, log_q })
    }
}
