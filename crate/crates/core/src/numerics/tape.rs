//! Define-by-run reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the node list is already a topological order and the
//! backward sweep simply walks it in reverse, visiting each node once.
//! Parameters are read in place from a borrowed [`ParamStore`] rather than
//! copied onto the tape.

use std::collections::HashMap;
use std::rc::Rc;

use super::matrix::{gemm, lower_inverse, Matrix};
use super::params::ParamStore;
use crate::error::{dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Element-wise function returning `(value, derivative)`.
pub type PointwiseFn = Rc<dyn Fn(f64) -> (f64, f64)>;

enum Op {
    Const,
    Leaf,
    Param(usize),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    AddDiag(Var),
    Scale(Var, f64),
    ColScale(Var, Rc<Vec<f64>>),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    Pointwise(Var, PointwiseFn),
    Dense { x: Var, w: Var, b: Option<Var>, act: Activation },
    ConcatCols(Vec<Var>),
    SliceCols { a: Var, start: usize },
    Gather { a: Var, rows: Rc<Vec<usize>> },
    StackRows(Vec<Var>),
    Tile { a: Var, times: usize },
    Reshape(Var),
    Transpose(Var),
    SumAll(Var),
    KernelMatrix(Var),
    Cholesky(Var),
    GraphShift { a: Var, shift: Rc<Matrix> },
}

struct Node {
    value: Option<Matrix>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<usize, Var>,
    track_params: bool,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    params: Vec<Option<Matrix>>,
    leaves: HashMap<Var, Matrix>,
}

impl Gradients {
    /// Adjoint of parameter `id`; `None` if the loss does not depend on it.
    pub fn param(&self, id: usize) -> Option<&Matrix> {
        self.params.get(id).and_then(Option::as_ref)
    }

    /// Adjoint of a leaf; zero-shaped leaves the loss never touched give `None`.
    pub fn leaf(&self, v: Var) -> Option<&Matrix> {
        self.leaves.get(&v)
    }

    pub fn into_params(self) -> Vec<Option<Matrix>> {
        self.params
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { store: None, nodes: Vec::new(), param_vars: HashMap::new(), track_params: true }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self { store: Some(store), ..Self::new() }
    }

    /// Parameters are read but never differentiated; used for inference.
    pub fn inference(store: &'p ParamStore) -> Self {
        Self { store: Some(store), track_params: false, ..Self::new() }
    }

    pub fn store(&self) -> Option<&'p ParamStore> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.expect("param node without store").value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Const, false)
    }

    /// Differentiable input whose adjoint is reported by [`Gradients::leaf`].
    pub fn leaf(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Node for a stored parameter, created once per tape.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let store = self.store.ok_or_else(|| Error::Store("tape has no parameter store".into()))?;
        let id = store.id(name)?;
        if let Some(v) = self.param_vars.get(&id) {
            return Ok(*v);
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: self.track_params });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        Ok(v)
    }

    /// `op(a) · op(b)` where `op` transposes when the flag is set.
    pub fn matmul_ex(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        let (m, k) = if ta { (am.cols(), am.rows()) } else { am.shape() };
        let (k2, n) = if tb { (bm.cols(), bm.rows()) } else { bm.shape() };
        if k != k2 {
            return Err(dim_err!("matmul {:?}{} · {:?}{}", am.shape(), if ta { "ᵀ" } else { "" }, bm.shape(), if tb { "ᵀ" } else { "" }));
        }
        let mut out = Matrix::zeros(m, n);
        gemm(1.0, am, ta, bm, tb, 0.0, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, false, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, false, b, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.len() != am.cols() {
            return Err(dim_err!("add_row {:?} + {:?}", am.shape(), rm.shape()));
        }
        let mut out = am.clone();
        let r = rm.as_slice().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(out, Op::AddRow { a, row }, ng))
    }

    /// `a + value·I` with a constant `value`.
    pub fn add_diag(&mut self, a: Var, value: f64) -> Result<Var> {
        let am = self.value(a);
        if !am.is_square() {
            return Err(dim_err!("add_diag on {:?}", am.shape()));
        }
        let out = am.add_diagonal(value);
        let ng = self.needs(a);
        Ok(self.push(out, Op::AddDiag(a), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Multiplies column `j` by the constant `scales[j]`.
    pub fn col_scale(&mut self, a: Var, scales: &[f64]) -> Result<Var> {
        let am = self.value(a);
        if scales.len() != am.cols() {
            return Err(dim_err!("col_scale with {} scales on {:?}", scales.len(), am.shape()));
        }
        let mut out = am.clone();
        for i in 0..out.rows() {
            for (o, s) in out.row_mut(i).iter_mut().zip(scales) {
                *o *= s;
            }
        }
        let ng = self.needs(a);
        Ok(self.push(out, Op::ColScale(a, Rc::new(scales.to_vec())), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        let ng = self.needs(a);
        self.push(out, Op::Abs(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let ng = self.needs(a);
        self.push(out, Op::Square(a), ng)
    }

    /// Applies `f` element-wise; `f` returns `(value, derivative)`.
    pub fn pointwise(&mut self, a: Var, f: PointwiseFn) -> Var {
        let out = self.value(a).map(|x| f(x).0);
        let ng = self.needs(a);
        self.push(out, Op::Pointwise(a, f), ng)
    }

    /// Fused affine block `act(x · wᵀ + b)` with `w` stored as `out × in`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>, act: Activation) -> Result<Var> {
        let (xm, wm) = (self.value(x), self.value(w));
        if xm.cols() != wm.cols() {
            return Err(dim_err!("dense input {:?} against weight {:?}", xm.shape(), wm.shape()));
        }
        let mut out = Matrix::zeros(xm.rows(), wm.rows());
        gemm(1.0, xm, false, wm, true, 0.0, &mut out);
        if let Some(b) = b {
            let bm = self.value(b);
            if bm.len() != wm.rows() {
                return Err(dim_err!("dense bias {:?} for {} outputs", bm.shape(), wm.rows()));
            }
            let bias = bm.as_slice();
            for i in 0..out.rows() {
                for (o, bb) in out.row_mut(i).iter_mut().zip(bias) {
                    *o += bb;
                }
            }
        }
        if act != Activation::Identity {
            out.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Dense { x, w, b, act }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(dim_err!("concat_cols with differing row counts"));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let am = self.value(a);
        if start + len > am.cols() {
            return Err(dim_err!("slice_cols {start}..{} of {:?}", start + len, am.shape()));
        }
        let mut out = Matrix::zeros(am.rows(), len);
        for r in 0..am.rows() {
            out.row_mut(r).copy_from_slice(&am.row(r)[start..start + len]);
        }
        let ng = self.needs(a);
        Ok(self.push(out, Op::SliceCols { a, start }, ng))
    }

    /// Row re-indexing; gradients flow to the selected rows' values only.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let am = self.value(a);
        if let Some(bad) = rows.iter().find(|&&r| r >= am.rows()) {
            return Err(dim_err!("gather row {bad} of {:?}", am.shape()));
        }
        let mut out = Matrix::zeros(rows.len(), am.cols());
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(am.row(r));
        }
        let ng = self.needs(a);
        Ok(self.push(out, Op::Gather { a, rows: Rc::new(rows.to_vec()) }, ng))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.gather_rows(a, &[r])
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|p| self.value(*p).cols() != cols) {
            return Err(dim_err!("stack_rows with differing column counts"));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).as_slice());
        }
        let rows = data.len() / cols.max(1);
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(Matrix::from_raw(rows, cols, data), Op::StackRows(parts.to_vec()), ng))
    }

    /// Stacks `a` vertically `times` times.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Var {
        let am = self.value(a);
        let mut data = Vec::with_capacity(am.len() * times);
        for _ in 0..times {
            data.extend_from_slice(am.as_slice());
        }
        let out = Matrix::from_raw(am.rows() * times, am.cols(), data);
        let ng = self.needs(a);
        self.push(out, Op::Tile { a, times }, ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.needs(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push(Matrix::from_raw(1, 1, vec![s]), Op::SumAll(a), ng)
    }

    /// Distance kernel `K_ij = exp(-(z_i - z_j)^2)` of a vector node.
    pub fn kernel_matrix(&mut self, z: Var) -> Result<Var> {
        let zm = self.value(z);
        if zm.rows() != 1 && zm.cols() != 1 {
            return Err(dim_err!("kernel_matrix expects a vector, got {:?}", zm.shape()));
        }
        let out = kernel_matrix_value(zm.as_slice());
        let ng = self.needs(z);
        Ok(self.push(out, Op::KernelMatrix(z), ng))
    }

    /// Lower Cholesky factor. The input must already carry any jitter.
    pub fn cholesky(&mut self, a: Var) -> Result<Var> {
        let (l, _) = super::matrix::cholesky(self.value(a), 0.0)?;
        let ng = self.needs(a);
        Ok(self.push(l, Op::Cholesky(a), ng))
    }

    /// Applies `shift` to every consecutive block of `shift.rows()` rows.
    pub fn graph_shift(&mut self, a: Var, shift: Rc<Matrix>) -> Result<Var> {
        let am = self.value(a);
        let n = shift.rows();
        if !shift.is_square() || n == 0 || am.rows() % n != 0 {
            return Err(dim_err!("graph shift {:?} on signal {:?}", shift.shape(), am.shape()));
        }
        let out = block_apply(&shift, am, false);
        let ng = self.needs(a);
        Ok(self.push(out, Op::GraphShift { a, shift }, ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let n_params = self.store.map_or(0, ParamStore::len);
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients { params: vec![None; n_params], leaves: HashMap::new() };
        if !self.needs(loss) {
            return Ok(out);
        }
        grads[loss.0] = Some(Matrix::from_raw(1, 1, vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Leaf => {
                    out.leaves.insert(Var(i), g);
                }
                Op::Param(id) => {
                    out.params[*id] = Some(g);
                }
                op => self.propagate(op, Var(i), &g, &mut grads)?,
            }
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op, me: Var, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let y = self.value(me);
        // Accumulates `delta` into the adjoint of `v` if it needs one.
        let mut acc = |v: Var, delta: Matrix| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match op {
            Op::Const | Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul { a, b, ta, tb } => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut da = Matrix::zeros(am.rows(), am.cols());
                    match (ta, tb) {
                        (false, false) => gemm(1.0, g, false, bm, true, 0.0, &mut da),
                        (false, true) => gemm(1.0, g, false, bm, false, 0.0, &mut da),
                        (true, false) => gemm(1.0, bm, false, g, true, 0.0, &mut da),
                        (true, true) => gemm(1.0, bm, true, g, true, 0.0, &mut da),
                    }
                    acc(*a, da);
                }
                if self.needs(*b) {
                    let mut db = Matrix::zeros(bm.rows(), bm.cols());
                    match (ta, tb) {
                        (false, false) => gemm(1.0, am, true, g, false, 0.0, &mut db),
                        (false, true) => gemm(1.0, g, true, am, false, 0.0, &mut db),
                        (true, false) => gemm(1.0, am, false, g, false, 0.0, &mut db),
                        (true, true) => gemm(1.0, g, true, am, true, 0.0, &mut db),
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    acc(*a, g.zip_map(bm, |x, y| x * y)?);
                }
                if self.needs(*b) {
                    acc(*b, g.zip_map(am, |x, y| x * y)?);
                }
            }
            Op::AddRow { a, row } => {
                acc(*a, g.clone());
                if self.needs(*row) {
                    let rm = self.value(*row);
                    let sums = column_sums(g);
                    acc(*row, Matrix::from_raw(rm.rows(), rm.cols(), sums));
                }
            }
            Op::AddDiag(a) => acc(*a, g.clone()),
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::ColScale(a, scales) => {
                let mut d = g.clone();
                for r in 0..d.rows() {
                    for (v, s) in d.row_mut(r).iter_mut().zip(scales.iter()) {
                        *v *= s;
                    }
                }
                acc(*a, d);
            }
            Op::Tanh(a) => acc(*a, g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv))?),
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv))?),
            Op::Abs(a) => {
                let am = self.value(*a);
                acc(*a, g.zip_map(am, |gv, x| if x > 0.0 { gv } else if x < 0.0 { -gv } else { 0.0 })?);
            }
            Op::Square(a) => {
                let am = self.value(*a);
                acc(*a, g.zip_map(am, |gv, x| 2.0 * x * gv)?);
            }
            Op::Pointwise(a, f) => {
                let am = self.value(*a);
                acc(*a, g.zip_map(am, |gv, x| gv * f(x).1)?);
            }
            Op::Dense { x, w, b, act } => {
                let d = if *act == Activation::Identity {
                    g.clone()
                } else {
                    g.zip_map(y, |gv, yv| gv * act.derivative_from_output(yv))?
                };
                let (xm, wm) = (self.value(*x), self.value(*w));
                if self.needs(*x) {
                    let mut dx = Matrix::zeros(xm.rows(), xm.cols());
                    gemm(1.0, &d, false, wm, false, 0.0, &mut dx);
                    acc(*x, dx);
                }
                if self.needs(*w) {
                    let mut dw = Matrix::zeros(wm.rows(), wm.cols());
                    gemm(1.0, &d, true, xm, false, 0.0, &mut dw);
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let bm = self.value(*b);
                        acc(*b, Matrix::from_raw(bm.rows(), bm.cols(), column_sums(&d)));
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    if self.needs(*p) {
                        let mut d = Matrix::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                        }
                        acc(*p, d);
                    }
                    off += pc;
                }
            }
            Op::SliceCols { a, start } => {
                let am = self.value(*a);
                let mut d = Matrix::zeros(am.rows(), am.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::Gather { a, rows } => {
                let am = self.value(*a);
                let mut d = Matrix::zeros(am.rows(), am.cols());
                for (i, &r) in rows.iter().enumerate() {
                    for (dv, gv) in d.row_mut(r).iter_mut().zip(g.row(i)) {
                        *dv += gv;
                    }
                }
                acc(*a, d);
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let pm = self.value(*p);
                    let n = pm.len();
                    if self.needs(*p) {
                        acc(*p, Matrix::from_raw(pm.rows(), pm.cols(), g.as_slice()[off..off + n].to_vec()));
                    }
                    off += n;
                }
            }
            Op::Tile { a, times } => {
                let am = self.value(*a);
                let n = am.len();
                let mut d = vec![0.0; n];
                for t in 0..*times {
                    for (dv, gv) in d.iter_mut().zip(&g.as_slice()[t * n..(t + 1) * n]) {
                        *dv += gv;
                    }
                }
                acc(*a, Matrix::from_raw(am.rows(), am.cols(), d));
            }
            Op::Reshape(a) => {
                let am = self.value(*a);
                acc(*a, g.clone().reshaped(am.rows(), am.cols())?);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::SumAll(a) => {
                let am = self.value(*a);
                acc(*a, Matrix::filled(am.rows(), am.cols(), g.as_slice()[0]));
            }
            Op::KernelMatrix(z) => {
                let zm = self.value(*z);
                let zs = zm.as_slice();
                let n = zs.len();
                let mut dz = vec![0.0; n];
                for i in 0..n {
                    let mut s = 0.0;
                    for j in 0..n {
                        if i != j {
                            let sym = g[(i, j)] + g[(j, i)];
                            s += sym * (-2.0) * (zs[i] - zs[j]) * y[(i, j)];
                        }
                    }
                    dz[i] = s;
                }
                acc(*z, Matrix::from_raw(zm.rows(), zm.cols(), dz));
            }
            Op::Cholesky(a) => acc(*a, cholesky_adjoint(y, g)),
            Op::GraphShift { a, shift } => acc(*a, block_apply(shift, g, true)),
        }
        Ok(())
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (acc, v) in s.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    s
}

pub fn kernel_matrix_value(z: &[f64]) -> Matrix {
    let n = z.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let d = z[i] - z[j];
            let v = (-d * d).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `op(S) · X_b` for every block `X_b` of `S.rows()` rows.
fn block_apply(shift: &Matrix, x: &Matrix, transpose: bool) -> Matrix {
    let n = shift.rows();
    let f = x.cols();
    let blocks = x.rows() / n;
    let mut out = Matrix::zeros(x.rows(), f);
    for b in 0..blocks {
        let xb = Matrix::from_raw(n, f, x.as_slice()[b * n * f..(b + 1) * n * f].to_vec());
        let mut ob = Matrix::zeros(n, f);
        gemm(1.0, shift, transpose, &xb, false, 0.0, &mut ob);
        out.as_mut_slice()[b * n * f..(b + 1) * n * f].copy_from_slice(ob.as_slice());
    }
    out
}

/// Adjoint of `A ↦ chol(A)` for symmetric `A`:
/// `sym(L⁻ᵀ Φ(Lᵀ L̄) L⁻¹)` with `Φ` taking the lower triangle and halving
/// the diagonal.
fn cholesky_adjoint(l: &Matrix, lbar: &Matrix) -> Matrix {
    let n = l.rows();
    let mut p = l.t_matmul(lbar).expect("square");
    for i in 0..n {
        for j in 0..n {
            if j > i {
                p[(i, j)] = 0.0;
            } else if i == j {
                p[(i, j)] *= 0.5;
            }
        }
    }
    let linv = lower_inverse(l);
    let s = linv.t_matmul(&p).expect("square").matmul(&linv).expect("square");
    s.symmetrized()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_loss_has_unit_adjoint() {
        let mut t = Tape::new();
        let th = t.leaf(Matrix::from_raw(1, 1, vec![0.7]));
        let g = t.backward(th).unwrap();
        assert_eq!(g.leaf(th).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn tanh_adjoint_at_zero() {
        let mut t = Tape::new();
        let th = t.leaf(Matrix::from_raw(1, 1, vec![0.0]));
        let y = t.tanh(th);
        let g = t.backward(y).unwrap();
        assert_eq!(g.leaf(th).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 1));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_parameters_get_no_adjoint() {
        let mut store = ParamStore::new();
        store.insert("used", Matrix::from_raw(1, 1, vec![2.0])).unwrap();
        store.insert("unused", Matrix::from_raw(1, 1, vec![3.0])).unwrap();
        let mut t = Tape::with_params(&store);
        let u = t.param("used").unwrap();
        let _ = t.param("unused").unwrap();
        let sq = t.square(u);
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.param(0).unwrap()[(0, 0)], 4.0);
        assert!(g.param(1).is_none());
    }

    #[test]
    fn shared_nodes_accumulate() {
        // loss = x * x + x via two paths through the same leaf
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_raw(1, 1, vec![3.0]));
        let xx = t.mul(x, x).unwrap();
        let s = t.add(xx, x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.leaf(x).unwrap()[(0, 0)], 7.0);
    }

    #[test]
    fn inference_tape_skips_parameters() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::from_raw(1, 1, vec![2.0])).unwrap();
        let mut t = Tape::inference(&store);
        let w = t.param("w").unwrap();
        let loss = t.sum(w);
        let g = t.backward(loss).unwrap();
        assert!(g.param(0).is_none());
    }
}
