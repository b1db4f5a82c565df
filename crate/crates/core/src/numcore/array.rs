//! Row-major dense arrays and the value-level kernels the model is built from.
//!
//! Every kernel here is a pure function of its inputs. The tape in
//! [`super::tape`] records calls to these kernels and adds the matching
//! backward rules; anything that needs a value without gradients (metrics,
//! diagnostics, oracles) can call them directly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, PrlfError, Result};

/// Norms below this are treated as zero by [`l1_normalize`].
pub const L1_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return shape_err(
                "DenseArray::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            );
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("DenseArray::from_rows", "ragged rows");
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        })
    }

    /// A 1×n row vector.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::row_vector(&[value])
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    /// The single value of a 1×1 array.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return shape_err("item", format!("expected one element, shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn zip_with(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        if !self.same_shape(other) {
            return shape_err(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            );
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn scale_in_place(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// Matrix-valued views as 2-D: rank-1 arrays are treated as a single row.
    fn into_matrix(self, rows: usize, cols: usize) -> Self {
        Self {
            shape: vec![rows, cols],
            data: self.data,
        }
    }
}

pub fn check_finite(a: &DenseArray, op: &'static str) -> Result<()> {
    if a.is_finite() {
        Ok(())
    } else {
        Err(PrlfError::NonFinite { op })
    }
}

pub fn matmul(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    let (n, k) = a.dims();
    let (k2, m) = b.dims();
    if k != k2 {
        return shape_err("matmul", format!("{n}x{k} · {k2}x{m}"));
    }
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = a.row(i);
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = b.row(p);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(DenseArray {
        shape: vec![n, m],
        data: out,
    })
}

pub fn transpose(a: &DenseArray) -> DenseArray {
    let (r, c) = a.dims();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    DenseArray {
        shape: vec![c, r],
        data: out,
    }
}

/// `x·W + b`, with `b` a 1×m row broadcast over the rows of the product.
pub fn linear(x: &DenseArray, w: &DenseArray, b: Option<&DenseArray>) -> Result<DenseArray> {
    let xw = matmul(x, w)?;
    match b {
        Some(b) => add_row(&xw, b),
        None => Ok(xw),
    }
}

pub fn add(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    a.zip_with(b, "add", |x, y| x + y)
}

pub fn sub(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    a.zip_with(b, "sub", |x, y| x - y)
}

/// Elementwise (Hadamard) product.
pub fn mul(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    a.zip_with(b, "mul", |x, y| x * y)
}

pub fn scale(a: &DenseArray, s: f64) -> DenseArray {
    a.map(|v| v * s)
}

fn broadcast_row(
    a: &DenseArray,
    row: &DenseArray,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<DenseArray> {
    let (r, c) = a.dims();
    if row.dims() != (1, c) {
        return shape_err(op, format!("{r}x{c} with row {:?}", row.shape));
    }
    let mut out = a.clone().into_matrix(r, c);
    for i in 0..r {
        for (o, &v) in out.row_mut(i).iter_mut().zip(row.data()) {
            *o = f(*o, v);
        }
    }
    Ok(out)
}

/// Adds a 1×c row to every row of `a`.
pub fn add_row(a: &DenseArray, row: &DenseArray) -> Result<DenseArray> {
    broadcast_row(a, row, "add_row", |x, y| x + y)
}

/// Multiplies every row of `a` elementwise by a 1×c row.
pub fn mul_row(a: &DenseArray, row: &DenseArray) -> Result<DenseArray> {
    broadcast_row(a, row, "mul_row", |x, y| x * y)
}

/// ReLU; the subgradient at exactly zero is taken as zero.
pub fn relu(a: &DenseArray) -> DenseArray {
    a.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &DenseArray) -> DenseArray {
    a.map(sigmoid_scalar)
}

pub fn softmax_slice(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax_rows(a: &DenseArray) -> DenseArray {
    let (r, c) = a.dims();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        data.extend(softmax_slice(a.row(i)));
    }
    DenseArray {
        shape: vec![r, c],
        data,
    }
}

/// Inverted-dropout keep mask: kept entries hold `1/(1-rate)`, dropped ones 0.
pub fn dropout_mask<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut R,
) -> Result<DenseArray> {
    if !(0.0..1.0).contains(&rate) {
        return crate::error::contract(format!("dropout rate {rate} outside [0,1)"));
    }
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Ok(DenseArray {
        shape: vec![rows, cols],
        data,
    })
}

pub fn concat_rows(parts: &[&DenseArray]) -> Result<DenseArray> {
    let cols = parts.first().map_or(0, |p| p.cols());
    if parts.iter().any(|p| p.cols() != cols) {
        return shape_err("concat_rows", "column counts differ");
    }
    let rows = parts.iter().map(|p| p.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Ok(DenseArray {
        shape: vec![rows, cols],
        data,
    })
}

pub fn concat_cols(parts: &[&DenseArray]) -> Result<DenseArray> {
    let rows = parts.first().map_or(0, |p| p.rows());
    if parts.iter().any(|p| p.rows() != rows) {
        return shape_err("concat_cols", "row counts differ");
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(i));
        }
    }
    Ok(DenseArray {
        shape: vec![rows, cols],
        data,
    })
}

pub fn slice_rows(a: &DenseArray, start: usize, len: usize) -> Result<DenseArray> {
    let (r, c) = a.dims();
    if start + len > r {
        return shape_err("slice_rows", format!("rows {start}..{} of {r}", start + len));
    }
    Ok(DenseArray {
        shape: vec![len, c],
        data: a.data[start * c..(start + len) * c].to_vec(),
    })
}

/// Mean over rows, giving a 1×c row.
pub fn mean_rows(a: &DenseArray) -> DenseArray {
    let (r, c) = a.dims();
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(a.row(i)) {
            *o += v;
        }
    }
    let inv = 1.0 / r.max(1) as f64;
    for o in &mut out {
        *o *= inv;
    }
    DenseArray {
        shape: vec![1, c],
        data: out,
    }
}

/// Divides by the L1 norm; inputs with norm below [`L1_EPS`] map to the
/// uniform vector.
pub fn l1_normalize(a: &DenseArray) -> DenseArray {
    let norm: f64 = a.data.iter().map(|v| v.abs()).sum();
    if norm < L1_EPS {
        let n = a.len().max(1);
        return a.map(|_| 1.0 / n as f64);
    }
    a.map(|v| v / norm)
}

pub fn l1_normalize3(v: [f64; 3]) -> [f64; 3] {
    let out = l1_normalize(&DenseArray::row_vector(&v));
    [out.data[0], out.data[1], out.data[2]]
}

/// Per-row inner products of two equally shaped arrays, as an r×1 column.
pub fn row_dots(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    if !a.same_shape(b) {
        return shape_err("row_dots", format!("{:?} vs {:?}", a.shape, b.shape));
    }
    let r = a.rows();
    let data = (0..r)
        .map(|i| a.row(i).iter().zip(b.row(i)).map(|(x, y)| x * y).sum())
        .collect();
    Ok(DenseArray {
        shape: vec![r, 1],
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> DenseArray {
        DenseArray::row_vector(v)
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let s = softmax_rows(&row(&[0.0, 0.0, 0.0]));
        for &p in s.data() {
            assert_eq!(p, 1.0 / 3.0);
        }
    }

    #[test]
    fn l1_normalize_examples() {
        let n = l1_normalize(&row(&[2.0, 3.0, 5.0]));
        assert_eq!(n.data(), &[0.2, 0.3, 0.5]);
        let u = l1_normalize(&row(&[0.0, 1e-14, 0.0]));
        assert_eq!(u.data(), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn relu_example() {
        assert_eq!(relu(&row(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn linear_matches_manual() {
        let x = DenseArray::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let w = DenseArray::from_rows(&[vec![1.0, 0.0, -1.0], vec![0.5, 2.0, 1.0]]).unwrap();
        let b = row(&[0.1, 0.2, 0.3]);
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[2.1, 4.2, 1.3]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = DenseArray::zeros(2, 3);
        let b = DenseArray::zeros(2, 3);
        assert!(matmul(&a, &b).is_err());
        assert!(add(&a, &DenseArray::zeros(3, 2)).is_err());
        assert!(DenseArray::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let a = DenseArray::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = DenseArray::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let c = concat_rows(&[&a, &b]).unwrap();
        assert_eq!(slice_rows(&c, 1, 2).unwrap(), b);
        let d = concat_cols(&[&b, &b]).unwrap();
        assert_eq!(d.row(1), &[5.0, 6.0, 5.0, 6.0]);
    }

    #[test]
    fn mean_rows_example() {
        let a = DenseArray::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(mean_rows(&a).data(), &[2.0, 4.0]);
    }

    #[test]
    fn dropout_rate_must_be_below_one() {
        let mut rng = rand::thread_rng();
        assert!(dropout_mask(2, 2, 1.0, &mut rng).is_err());
        let m = dropout_mask(4, 4, 0.0, &mut rng).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
    }
}
