//! LSTM proposal with time-invariant parameters.
//!
//! Parameters: `lstm.wx|wh|b`, affine read-outs `mu.0.w|b` and
//! `sigma.0.w|b` from the hidden state, and the mixing matrix `C`. The
//! per-particle memory row is `[h | c]`.

use super::arch::{gaussian_head, Architecture, Draw, StepCtx};
use crate::error::{Error, Result};
use crate::numerics::layers::{init_lstm, init_mlp, lstm_on_tape, mlp_on_tape};
use crate::numerics::{Activation, Matrix, ParamStore, Rng, Tape, Var};
use crate::ssm::ModelSpec;

#[derive(Clone, Debug)]
pub struct Rnn {
    pub hidden: usize,
}

impl Architecture for Rnn {
    fn family(&self) -> &'static str {
        "rnn"
    }

    fn init(&self, model: &ModelSpec, _horizon: usize, rng: &mut Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        init_lstm(&mut store, "lstm", model.n + model.m, self.hidden, &mut rng.substream(0))?;
        init_mlp(&mut store, "mu", &[self.hidden, model.n], &mut rng.substream(1))?;
        init_mlp(&mut store, "sigma", &[self.hidden, model.n], &mut rng.substream(2))?;
        store.insert("C", Matrix::identity(model.n))?;
        Ok(store)
    }

    fn memory_len(&self) -> usize {
        2 * self.hidden
    }

    fn embedding_bias(&self) -> Option<String> {
        Some("sigma.0.b".into())
    }

    fn draw(
        &self,
        tape: &mut Tape,
        ctx: &StepCtx,
        _t: usize,
        x_prev: Var,
        memory: Option<Var>,
        y: &[f64],
        noise: &Matrix,
    ) -> Result<Draw> {
        let h = self.hidden;
        let memory = memory.ok_or_else(|| Error::Contract("recurrent proposal needs a memory".into()))?;
        if tape.value(memory).cols() != 2 * h {
            return Err(Error::Contract(format!(
                "memory of width {} for hidden size {h}",
                tape.value(memory).cols()
            )));
        }
        let (xs, ys) = ctx.frame.inputs(tape, x_prev, y)?;
        let input = tape.concat_cols(&[xs, ys])?;
        let h0 = tape.slice_cols(memory, 0, h)?;
        let c0 = tape.slice_cols(memory, h, h)?;
        let (h1, c1) = lstm_on_tape(tape, "lstm", input, h0, c0)?;
        let net_mu = mlp_on_tape(tape, "mu", 1, h1, Activation::Identity)?;
        let z = mlp_on_tape(tape, "sigma", 1, h1, Activation::Identity)?;
        let mean = ctx.frame.place_mean(tape, ctx.model, x_prev, net_mu)?;
        let c = tape.param("C")?;
        let (sample, log_q) = gaussian_head(tape, ctx.frame, mean, z, c, noise)?;
        let next = tape.concat_cols(&[h1, c1])?;
        Ok(Draw { sample, memory: Some(next), log_q })
    }
}
