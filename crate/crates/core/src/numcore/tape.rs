//! Reverse-mode differentiation over dense arrays.
//!
//! A [`Tape`] records every kernel application as a node holding its output
//! value. Nodes are appended in creation order and only reference earlier
//! nodes, so the graph is acyclic by construction and [`Tape::backward`]
//! visits it in reverse creation order.
//!
//! Each worker owns its tape; parameters are copied in from a shared
//! [`ParameterStore`] the first time they are used.

use std::collections::BTreeMap;

use rand::Rng;

use super::array::{self as k, check_finite, DenseArray};
use super::params::{Gradients, ParamId, ParameterStore};
use crate::error::{contract, shape_err, Result};

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Differentiable input (gradient is reported but not applied anywhere).
    Input,
    /// Constant with no gradient.
    Const,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    MaskMul(Var, DenseArray),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    MeanRows(Var),
    L1Normalize { input: Var, degenerate: bool },
    RowDots(Var, Var),
    Square(Var),
    MeanAll(Var),
    SumAll(Var),
    LogPick { input: Var, index: usize, clamped: bool },
}

#[derive(Debug)]
struct Node {
    value: DenseArray,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
    backward_done: bool,
    clamped: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    /// How many times a log-probability had to be clamped at [`PROB_FLOOR`].
    pub fn clamp_count(&self) -> usize {
        self.clamped
    }

    /// Clears recorded nodes so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.backward_done = false;
        self.clamped = 0;
    }

    fn push(&mut self, value: DenseArray, op: Op, op_name: &'static str) -> Result<Var> {
        check_finite(&value, op_name)?;
        let requires_grad = match &op {
            Op::Const => false,
            Op::Input | Op::Param => true,
            other => inputs(other).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: DenseArray) -> Result<Var> {
        self.push(value, Op::Input, "input")
    }

    pub fn constant(&mut self, value: DenseArray) -> Result<Var> {
        self.push(value, Op::Const, "constant")
    }

    /// The tape node for a stored parameter, created on first use.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let v = self.push(store.get(id).clone(), Op::Param, "param")?;
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = k::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = k::transpose(self.value(a));
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = k::add(self.value(a), self.value(b))?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = k::sub(self.value(a), self.value(b))?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = k::mul(self.value(a), self.value(b))?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = k::add_row(self.value(a), self.value(row))?;
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = k::mul_row(self.value(a), self.value(row))?;
        self.push(out, Op::MulRow(a, row), "mul_row")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = k::scale(self.value(a), s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = k::relu(self.value(a));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = k::sigmoid(self.value(a));
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = k::softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// `x·W + b` with an optional bias row.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(xw, b),
            None => Ok(xw),
        }
    }

    /// Inverted dropout. Identity when `rng` is `None` (evaluation) or the
    /// rate is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        let Some(rng) = rng else { return Ok(a) };
        if rate == 0.0 {
            return Ok(a);
        }
        let (r, c) = self.value(a).dims();
        let mask = k::dropout_mask(r, c, rate, rng)?;
        self.mask_mul(a, mask)
    }

    /// Elementwise product with a constant mask.
    pub fn mask_mul(&mut self, a: Var, mask: DenseArray) -> Result<Var> {
        let out = k::mul(self.value(a), &mask)?;
        self.push(out, Op::MaskMul(a, mask), "mask_mul")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&DenseArray> = parts.iter().map(|&v| self.value(v)).collect();
        let out = k::concat_rows(&vals)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&DenseArray> = parts.iter().map(|&v| self.value(v)).collect();
        let out = k::concat_cols(&vals)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = k::slice_rows(self.value(a), start, len)?;
        self.push(out, Op::SliceRows(a, start), "slice_rows")
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let out = k::mean_rows(self.value(a));
        self.push(out, Op::MeanRows(a), "mean_rows")
    }

    pub fn l1_normalize(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let norm: f64 = v.data().iter().map(|x| x.abs()).sum();
        let degenerate = norm < k::L1_EPS;
        let out = k::l1_normalize(v);
        self.push(
            out,
            Op::L1Normalize {
                input: a,
                degenerate,
            },
            "l1_normalize",
        )
    }

    pub fn row_dots(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = k::row_dots(self.value(a), self.value(b))?;
        self.push(out, Op::RowDots(a, b), "row_dots")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a), "square")
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let out = DenseArray::scalar(v.sum() / v.len().max(1) as f64);
        self.push(out, Op::MeanAll(a), "mean_all")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let out = DenseArray::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a), "sum_all")
    }

    /// `ln p[index]` for a 1×C probability row. Values under [`PROB_FLOOR`]
    /// are clamped and counted; a clamped entry passes no gradient.
    pub fn log_prob(&mut self, probs: Var, index: usize) -> Result<Var> {
        let p = self.value(probs);
        if p.rows() != 1 {
            return shape_err("log_prob", format!("expected a 1xC row, got {:?}", p.shape()));
        }
        if index >= p.cols() {
            return contract(format!("class index {index} out of range for {} classes", p.cols()));
        }
        let pv = p.get(0, index);
        let clamped = pv < PROB_FLOOR;
        if clamped {
            self.clamped += 1;
        }
        let out = DenseArray::scalar(pv.max(PROB_FLOOR).ln());
        self.push(
            out,
            Op::LogPick {
                input: probs,
                index,
                clamped,
            },
            "log_prob",
        )
    }

    /// `-ln p[label]` for a 1×C probability row.
    pub fn cross_entropy(&mut self, probs: Var, label: usize) -> Result<Var> {
        let p = self.value(probs);
        let total = p.sum();
        if (total - 1.0).abs() > 1e-9 || p.data().iter().any(|&x| x < 0.0) {
            return contract(format!("cross_entropy input is not a distribution (sum {total})"));
        }
        let lp = self.log_prob(probs, label)?;
        self.scale(lp, -1.0)
    }

    /// Propagates gradients from a 1×1 `loss` back through the tape.
    ///
    /// A tape can be differentiated once; call [`Tape::reset`] before reuse.
    pub fn backward(&mut self, loss: Var) -> Result<Backprop> {
        if self.backward_done {
            return contract("backward called twice on the same tape without reset");
        }
        if self.value(loss).len() != 1 {
            return shape_err("backward", "loss must be a single value");
        }
        self.backward_done = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<DenseArray>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(DenseArray::scalar(1.0).reshape_like(self.value(loss)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(idx, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }

        Ok(Backprop {
            grads,
            params: self.params.iter().map(|(&p, &v)| (p, v)).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &DenseArray, grads: &mut [Option<DenseArray>]) -> Result<()> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, d: DenseArray| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };

        match &node.op {
            Op::Input | Op::Const | Op::Param => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(*a, k::matmul(g, &k::transpose(val(*b)))?);
                }
                if wants(*b) {
                    acc(*b, k::matmul(&k::transpose(val(*a)), g)?);
                }
            }
            Op::Transpose(a) => acc(*a, k::transpose(g)),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, k::scale(g, -1.0));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    acc(*a, k::mul(g, val(*b))?);
                }
                if wants(*b) {
                    acc(*b, k::mul(g, val(*a))?);
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if wants(*row) {
                    acc(*row, column_sums(g));
                }
            }
            Op::MulRow(a, row) => {
                if wants(*a) {
                    acc(*a, k::mul_row(g, val(*row))?);
                }
                if wants(*row) {
                    acc(*row, column_sums(&k::mul(g, val(*a))?));
                }
            }
            Op::Scale(a, s) => acc(*a, k::scale(g, *s)),
            Op::Relu(a) => {
                let d = g.zip_with(val(*a), "relu'", |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.zip_with(&node.value, "sigmoid'", |gv, y| gv * y * (1.0 - y))?;
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let (r, c) = y.dims();
                let mut d = DenseArray::zeros(r, c);
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (j, out) in d.row_mut(i).iter_mut().enumerate() {
                        *out = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, d.reshape_like(val(*a)));
            }
            Op::MaskMul(a, mask) => acc(*a, k::mul(g, mask)?),
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let len = val(*p).rows();
                    if wants(*p) {
                        acc(*p, k::slice_rows(g, start, len)?.reshape_like(val(*p)));
                    }
                    start += len;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut start = 0;
                for p in parts {
                    let width = val(*p).cols();
                    if wants(*p) {
                        let mut d = DenseArray::zeros(rows, width);
                        for i in 0..rows {
                            d.row_mut(i).copy_from_slice(&g.row(i)[start..start + width]);
                        }
                        acc(*p, d.reshape_like(val(*p)));
                    }
                    start += width;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = val(*a).dims();
                let mut d = DenseArray::zeros(r, c);
                for i in 0..g.rows() {
                    d.row_mut(start + i).copy_from_slice(g.row(i));
                }
                acc(*a, d.reshape_like(val(*a)));
            }
            Op::MeanRows(a) => {
                let (r, c) = val(*a).dims();
                let inv = 1.0 / r.max(1) as f64;
                let mut d = DenseArray::zeros(r, c);
                for i in 0..r {
                    for (o, gv) in d.row_mut(i).iter_mut().zip(g.data()) {
                        *o = gv * inv;
                    }
                }
                acc(*a, d.reshape_like(val(*a)));
            }
            Op::L1Normalize { input, degenerate } => {
                if !*degenerate {
                    let x = val(*input);
                    let s: f64 = x.data().iter().map(|v| v.abs()).sum();
                    let gx: f64 = g.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
                    let d = g.zip_with(x, "l1'", |gj, xj| {
                        let sign = if xj > 0.0 {
                            1.0
                        } else if xj < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        gj / s - sign * gx / (s * s)
                    })?;
                    acc(*input, d);
                }
            }
            Op::RowDots(a, b) => {
                let (r, c) = val(*a).dims();
                if wants(*a) {
                    let mut d = DenseArray::zeros(r, c);
                    for i in 0..r {
                        let gi = g.data()[i];
                        for (o, bv) in d.row_mut(i).iter_mut().zip(val(*b).row(i)) {
                            *o = gi * bv;
                        }
                    }
                    acc(*a, d.reshape_like(val(*a)));
                }
                if wants(*b) {
                    let mut d = DenseArray::zeros(r, c);
                    for i in 0..r {
                        let gi = g.data()[i];
                        for (o, av) in d.row_mut(i).iter_mut().zip(val(*a).row(i)) {
                            *o = gi * av;
                        }
                    }
                    acc(*b, d.reshape_like(val(*b)));
                }
            }
            Op::Square(a) => acc(*a, g.zip_with(val(*a), "square'", |gv, x| 2.0 * gv * x)?),
            Op::MeanAll(a) => {
                let x = val(*a);
                let gv = g.data()[0] / x.len().max(1) as f64;
                acc(*a, x.map(|_| gv));
            }
            Op::SumAll(a) => {
                let gv = g.data()[0];
                acc(*a, val(*a).map(|_| gv));
            }
            Op::LogPick {
                input,
                index,
                clamped,
            } => {
                let p = val(*input);
                let mut d = p.map(|_| 0.0);
                if !*clamped {
                    d.data_mut()[*index] = g.data()[0] / p.data()[*index];
                }
                acc(*input, d);
            }
        }
        Ok(())
    }
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Input | Op::Const | Op::Param => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddRow(a, b)
        | Op::MulRow(a, b)
        | Op::RowDots(a, b) => vec![*a, *b],
        Op::Transpose(a)
        | Op::Scale(a, _)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::SoftmaxRows(a)
        | Op::MaskMul(a, _)
        | Op::SliceRows(a, _)
        | Op::MeanRows(a)
        | Op::Square(a)
        | Op::MeanAll(a)
        | Op::SumAll(a) => vec![*a],
        Op::L1Normalize { input, .. } | Op::LogPick { input, .. } => vec![*input],
        Op::ConcatRows(parts) | Op::ConcatCols(parts) => parts.clone(),
    }
}

fn column_sums(g: &DenseArray) -> DenseArray {
    let (r, c) = g.dims();
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    DenseArray::row_vector(&out)
}

impl DenseArray {
    fn reshape_like(self, other: &DenseArray) -> DenseArray {
        DenseArray::new(other.shape().to_vec(), self.into_data())
            .expect("reshape_like called with matching element counts")
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Backprop {
    grads: Vec<Option<DenseArray>>,
    params: Vec<(ParamId, Var)>,
}

impl Backprop {
    /// Gradient with respect to a tape node; zero when the node was not reached.
    pub fn wrt(&self, tape: &Tape, v: Var) -> DenseArray {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => tape.value(v).map(|_| 0.0),
        }
    }

    /// Gradients for every parameter of `store`; parameters that the loss
    /// does not reach get exact zeros.
    pub fn param_grads(&self, store: &ParameterStore) -> Gradients {
        let mut out = Gradients::zeros_like(store);
        self.accumulate_into(&mut out);
        out
    }

    pub fn accumulate_into(&self, out: &mut Gradients) {
        for &(id, v) in &self.params {
            if let Some(g) = &self.grads[v.0] {
                out.accumulate(id, g);
            }
        }
    }

    /// Squared gradient norm over a subset of parameters, without
    /// materializing a full [`Gradients`] buffer.
    pub fn sq_norm_of(&self, ids: &[ParamId]) -> f64 {
        self.params
            .iter()
            .filter(|(id, _)| ids.contains(id))
            .filter_map(|(_, v)| self.grads[v.0].as_ref())
            .map(DenseArray::sq_norm)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64) -> (ParameterStore, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.add("w", DenseArray::scalar(value)).unwrap();
        (s, id)
    }

    #[test]
    fn linear_gradient() {
        let (store, id) = scalar_store(3.0);
        let mut tape = Tape::new();
        let w = tape.param(&store, id).unwrap();
        let x = tape.constant(DenseArray::scalar(2.0)).unwrap();
        let loss = tape.matmul(w, x).unwrap();
        let g = tape.backward(loss).unwrap().param_grads(&store);
        assert_eq!(g.get(id).data(), &[2.0]);
    }

    #[test]
    fn inactive_relu_has_zero_gradient() {
        let (store, id) = scalar_store(-1.0);
        let mut tape = Tape::new();
        let w = tape.param(&store, id).unwrap();
        let loss = tape.relu(w).unwrap();
        let g = tape.backward(loss).unwrap().param_grads(&store);
        assert_eq!(g.get(id).data(), &[0.0]);
    }

    #[test]
    fn relu_at_zero_passes_no_gradient() {
        let (store, id) = scalar_store(0.0);
        let mut tape = Tape::new();
        let w = tape.param(&store, id).unwrap();
        let loss = tape.relu(w).unwrap();
        let g = tape.backward(loss).unwrap().param_grads(&store);
        assert_eq!(g.get(id).data(), &[0.0]);
    }

    #[test]
    fn disconnected_parameter_gets_exact_zero() {
        let mut store = ParameterStore::new();
        let a = store.add("a", DenseArray::scalar(1.5)).unwrap();
        let b = store.add("b", DenseArray::row_vector(&[1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let av = tape.param(&store, a).unwrap();
        let _unused = tape.param(&store, b).unwrap();
        let loss = tape.square(av).unwrap();
        let g = tape.backward(loss).unwrap().param_grads(&store);
        assert_eq!(g.get(a).data(), &[3.0]);
        assert_eq!(g.get(b).data(), &[0.0, 0.0]);
    }

    #[test]
    fn second_backward_is_a_contract_violation() {
        let (store, id) = scalar_store(1.0);
        let mut tape = Tape::new();
        let w = tape.param(&store, id).unwrap();
        let loss = tape.square(w).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(
            tape.backward(loss),
            Err(crate::error::PrlfError::Contract(_))
        ));
        tape.reset();
        let w = tape.param(&store, id).unwrap();
        let loss = tape.square(w).unwrap();
        assert!(tape.backward(loss).is_ok());
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let cases: [(&[f64], usize, f64); 3] = [
            (&[1.0, 0.0, 0.0], 0, 0.0),
            (&[0.5, 0.5], 1, std::f64::consts::LN_2),
            (&[0.25; 4], 2, 4f64.ln()),
        ];
        for (p, label, expected) in cases {
            let mut tape = Tape::new();
            let pv = tape.constant(DenseArray::row_vector(p)).unwrap();
            let ce = tape.cross_entropy(pv, label).unwrap();
            assert!((tape.value(ce).item().unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let mut tape = Tape::new();
        let pv = tape.input(DenseArray::row_vector(&[1.0, 0.0])).unwrap();
        let ce = tape.cross_entropy(pv, 1).unwrap();
        assert!((tape.value(ce).item().unwrap() - (-PROB_FLOOR.ln())).abs() < 1e-12);
        assert_eq!(tape.clamp_count(), 1);
        let bp = tape.backward(ce).unwrap();
        assert_eq!(bp.wrt(&tape, pv).data(), &[0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_rejects_non_distribution() {
        let mut tape = Tape::new();
        let pv = tape.constant(DenseArray::row_vector(&[0.7, 0.7])).unwrap();
        assert!(tape.cross_entropy(pv, 0).is_err());
        let pv = tape.constant(DenseArray::row_vector(&[0.5, 0.5])).unwrap();
        assert!(tape.cross_entropy(pv, 2).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut tape = Tape::new();
        let x = tape.input(DenseArray::scalar(f64::NAN));
        assert!(matches!(x, Err(crate::error::PrlfError::NonFinite { .. })));
    }
}
