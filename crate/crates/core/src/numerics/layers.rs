//! Affine cascades, the LSTM cell and polynomial graph filters.
//!
//! Each block exists in two forms: a tape form that works on a batch of
//! rows (one row per particle) and reads weights from the parameter store,
//! and a plain value form used by tests and small callers.
//!
//! Weight naming below a prefix `p`:
//! - dense block `i`: `p.{i}.w` (out × in), `p.{i}.b` (1 × out)
//! - LSTM: `p.wx` (4H × in), `p.wh` (4H × H), `p.b` (1 × 4H), gate order i, f, g, o
//! - graph filter tap `d`: `p.{d}` (F × G)

use std::rc::Rc;

use super::matrix::{gemm, Matrix};
use super::params::ParamStore;
use super::rng::Rng;
use super::tape::{Activation, Tape, Var};
use crate::error::{dim_err, Result};

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
    Matrix::from_raw(rows, cols, data)
}

/// Registers a cascade mapping `sizes[0] → … → sizes[last]`.
pub fn init_mlp(store: &mut ParamStore, prefix: &str, sizes: &[usize], rng: &mut Rng) -> Result<()> {
    for (i, pair) in sizes.windows(2).enumerate() {
        store.insert(format!("{prefix}.{i}.w"), glorot(rng, pair[1], pair[0]))?;
        store.insert(format!("{prefix}.{i}.b"), Matrix::zeros(1, pair[1]))?;
    }
    Ok(())
}

/// Cascade of `layers` affine blocks, tanh after every hidden block and
/// `output` after the last one.
pub fn mlp_on_tape(tape: &mut Tape, prefix: &str, layers: usize, x: Var, output: Activation) -> Result<Var> {
    let mut h = x;
    for i in 0..layers {
        let w = tape.param(&format!("{prefix}.{i}.w"))?;
        let b = tape.param(&format!("{prefix}.{i}.b"))?;
        let act = if i + 1 == layers { output } else { Activation::Tanh };
        h = tape.dense(h, w, Some(b), act)?;
    }
    Ok(h)
}

/// Value form: `tanh(W x + b)` applied block after block.
pub fn mlp_forward(layers: &[(Matrix, Vec<f64>)], input: &[f64]) -> Result<Vec<f64>> {
    let mut h = input.to_vec();
    for (i, (w, b)) in layers.iter().enumerate() {
        if w.cols() != h.len() || b.len() != w.rows() {
            return Err(dim_err!("block {i}: weight {:?}, bias {}, input {}", w.shape(), b.len(), h.len()));
        }
        h = w.matvec(&h)?.iter().zip(b).map(|(z, bb)| (z + bb).tanh()).collect();
    }
    Ok(h)
}

pub fn init_lstm(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<()> {
    store.insert(format!("{prefix}.wx"), glorot(rng, 4 * hidden, input))?;
    store.insert(format!("{prefix}.wh"), glorot(rng, 4 * hidden, hidden))?;
    store.insert(format!("{prefix}.b"), Matrix::zeros(1, 4 * hidden))?;
    Ok(())
}

/// Batched LSTM cell without peepholes. `x` is K × in, `h` and `c` are K × H.
pub fn lstm_on_tape(tape: &mut Tape, prefix: &str, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let wx = tape.param(&format!("{prefix}.wx"))?;
    let wh = tape.param(&format!("{prefix}.wh"))?;
    let b = tape.param(&format!("{prefix}.b"))?;
    let hidden = tape.value(h).cols();
    if tape.value(wh).shape() != (4 * hidden, hidden) || tape.value(c).shape() != tape.value(h).shape() {
        return Err(dim_err!(
            "lstm state {:?}/{:?} against recurrent weight {:?}",
            tape.value(h).shape(),
            tape.value(c).shape(),
            tape.value(wh).shape()
        ));
    }
    let zx = tape.dense(x, wx, Some(b), Activation::Identity)?;
    let zh = tape.matmul_t(h, wh)?;
    let z = tape.add(zx, zh)?;
    let gi = tape.slice_cols(z, 0, hidden)?;
    let gf = tape.slice_cols(z, hidden, hidden)?;
    let gg = tape.slice_cols(z, 2 * hidden, hidden)?;
    let go = tape.slice_cols(z, 3 * hidden, hidden)?;
    let i = tape.sigmoid(gi);
    let f = tape.sigmoid(gf);
    let g = tape.tanh(gg);
    let o = tape.sigmoid(go);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c2 = tape.add(keep, write)?;
    let tc = tape.tanh(c2);
    let h2 = tape.mul(o, tc)?;
    Ok((h2, c2))
}

/// Weights of a single LSTM cell in value form.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub wx: Matrix,
    pub wh: Matrix,
    pub b: Vec<f64>,
}

/// Value form of [`lstm_on_tape`] for one state pair.
pub fn lstm_step(params: &LstmParams, hidden: (&[f64], &[f64]), input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut store = ParamStore::new();
    store.insert("l.wx", params.wx.clone())?;
    store.insert("l.wh", params.wh.clone())?;
    store.insert("l.b", Matrix::row_vector(&params.b))?;
    let mut tape = Tape::inference(&store);
    let x = tape.constant(Matrix::row_vector(input));
    let h = tape.constant(Matrix::row_vector(hidden.0));
    let c = tape.constant(Matrix::row_vector(hidden.1));
    let (h2, c2) = lstm_on_tape(&mut tape, "l", x, h, c)?;
    Ok((tape.value(h2).as_slice().to_vec(), tape.value(c2).as_slice().to_vec()))
}

pub fn init_graph_filter(
    store: &mut ParamStore,
    prefix: &str,
    order: usize,
    fin: usize,
    fout: usize,
    rng: &mut Rng,
) -> Result<()> {
    // The taps are summed, so the effective fan-in is (order + 1)·fin.
    let bound = (6.0 / ((order + 1) * fin + fout) as f64).sqrt();
    for d in 0..=order {
        let data = (0..fin * fout).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
        store.insert(format!("{prefix}.{d}"), Matrix::from_raw(fin, fout, data))?;
    }
    Ok(())
}

/// `Σ_d S^d X W_d` over a stack of graph signals: `x` holds `K` blocks of
/// `N` rows each, one block per particle.
pub fn graph_filter_on_tape(tape: &mut Tape, prefix: &str, order: usize, shift: &Rc<Matrix>, x: Var) -> Result<Var> {
    let mut z = x;
    let mut out = None;
    for d in 0..=order {
        if d > 0 {
            z = tape.graph_shift(z, Rc::clone(shift))?;
        }
        let w = tape.param(&format!("{prefix}.{d}"))?;
        let term = tape.matmul(z, w)?;
        out = Some(match out {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(out.expect("order ≥ 0 yields one term"))
}

/// Value form of the polynomial graph filter via iterated one-hop shifts.
pub fn graph_filter(s: &Matrix, x: &Matrix, coeffs: &[Matrix]) -> Result<Matrix> {
    if !s.is_square() || s.rows() != x.rows() {
        return Err(dim_err!("shift {:?} against signal {:?}", s.shape(), x.shape()));
    }
    let Some(first) = coeffs.first() else {
        return Err(dim_err!("graph filter needs at least one tap"));
    };
    let g = first.cols();
    if let Some(bad) = coeffs.iter().find(|w| w.shape() != (x.cols(), g)) {
        return Err(dim_err!("tap {:?}, expected {:?}", bad.shape(), (x.cols(), g)));
    }
    let mut out = x.matmul(first)?;
    let mut z = x.clone();
    for w in &coeffs[1..] {
        let mut next = Matrix::zeros(z.rows(), z.cols());
        gemm(1.0, s, false, &z, false, 0.0, &mut next);
        z = next;
        gemm(1.0, &z, false, w, false, 1.0, &mut out);
    }
    Ok(out)
}
