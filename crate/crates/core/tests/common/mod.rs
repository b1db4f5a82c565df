//! Shared fixtures for the integration tests.

#![allow(dead_code)]

pub mod oracle;

use prlf::numcore::{DenseArray, Tape, Var};
use prlf::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A scalar-valued function of one array input, built from a single kernel.
pub struct KernelCase {
    pub name: &'static str,
    pub shape: (usize, usize),
    /// Inputs must stay away from zero (absolute-value kinks).
    pub positive: bool,
    pub f: fn(&mut Tape, Var) -> Result<Var>,
}

/// Deterministic constant for use inside a kernel case.
pub fn konst(t: &mut Tape, rows: usize, cols: usize, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    t.constant(DenseArray::uniform(rows, cols, 1.0, &mut rng))
}

/// Reduces `v` to a scalar with fixed, unequal weights so that symmetric
/// gradient errors do not cancel.
pub fn weigh(t: &mut Tape, v: Var) -> Result<Var> {
    let (r, c) = t.value(v).dims();
    let w = konst(t, r, c, 9_999)?;
    let p = t.mul(v, w)?;
    t.sum_all(p)
}

pub fn point(case: &KernelCase, seed: u64) -> DenseArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = case.shape;
    let mut x = DenseArray::uniform(r, c, 1.0, &mut rng);
    if case.positive {
        x = x.map(|v| v.abs() + 0.1);
    }
    x
}

pub fn kernel_cases() -> Vec<KernelCase> {
    vec![
        KernelCase { name: "matmul_left", shape: (2, 3), positive: false, f: |t, x| {
            let b = konst(t, 3, 2, 1)?;
            let y = t.matmul(x, b)?;
            weigh(t, y)
        }},
        KernelCase { name: "matmul_right", shape: (3, 2), positive: false, f: |t, x| {
            let a = konst(t, 2, 3, 2)?;
            let y = t.matmul(a, x)?;
            weigh(t, y)
        }},
        KernelCase { name: "transpose", shape: (2, 3), positive: false, f: |t, x| {
            let y = t.transpose(x)?;
            weigh(t, y)
        }},
        KernelCase { name: "add", shape: (2, 3), positive: false, f: |t, x| {
            let c = konst(t, 2, 3, 3)?;
            let y = t.add(x, c)?;
            let y = t.mul(y, y)?;
            weigh(t, y)
        }},
        KernelCase { name: "sub", shape: (2, 3), positive: false, f: |t, x| {
            let c = konst(t, 2, 3, 4)?;
            let y = t.sub(c, x)?;
            let y = t.mul(y, y)?;
            weigh(t, y)
        }},
        KernelCase { name: "mul", shape: (2, 3), positive: false, f: |t, x| {
            let c = konst(t, 2, 3, 5)?;
            let y = t.mul(x, c)?;
            weigh(t, y)
        }},
        KernelCase { name: "add_row_matrix", shape: (3, 2), positive: false, f: |t, x| {
            let r = konst(t, 1, 2, 6)?;
            let y = t.add_row(x, r)?;
            let y = t.square(y)?;
            weigh(t, y)
        }},
        KernelCase { name: "add_row_row", shape: (1, 2), positive: false, f: |t, x| {
            let a = konst(t, 3, 2, 7)?;
            let y = t.add_row(a, x)?;
            let y = t.square(y)?;
            weigh(t, y)
        }},
        KernelCase { name: "mul_row_matrix", shape: (3, 2), positive: false, f: |t, x| {
            let r = konst(t, 1, 2, 8)?;
            let y = t.mul_row(x, r)?;
            weigh(t, y)
        }},
        KernelCase { name: "mul_row_row", shape: (1, 2), positive: false, f: |t, x| {
            let a = konst(t, 3, 2, 9)?;
            let y = t.mul_row(a, x)?;
            weigh(t, y)
        }},
        KernelCase { name: "scale", shape: (2, 2), positive: false, f: |t, x| {
            let y = t.scale(x, -1.7)?;
            let y = t.square(y)?;
            weigh(t, y)
        }},
        KernelCase { name: "relu", shape: (2, 3), positive: false, f: |t, x| {
            let y = t.relu(x)?;
            let y = t.square(y)?;
            weigh(t, y)
        }},
        KernelCase { name: "sigmoid", shape: (2, 3), positive: false, f: |t, x| {
            let y = t.sigmoid(x)?;
            weigh(t, y)
        }},
        KernelCase { name: "softmax_rows", shape: (2, 4), positive: false, f: |t, x| {
            let y = t.softmax_rows(x)?;
            weigh(t, y)
        }},
        KernelCase { name: "linear_input", shape: (2, 3), positive: false, f: |t, x| {
            let w = konst(t, 3, 2, 10)?;
            let b = konst(t, 1, 2, 11)?;
            let y = t.linear(x, w, Some(b))?;
            let y = t.square(y)?;
            weigh(t, y)
        }},
        KernelCase { name: "linear_weight", shape: (3, 2), positive: false, f: |t, x| {
            let a = konst(t, 2, 3, 12)?;
            let y = t.linear(a, x, None)?;
            let y = t.square(y)?;
            weigh(t, y)
        }},
        KernelCase { name: "linear_bias", shape: (1, 2), positive: false, f: |t, x| {
            let a = konst(t, 2, 3, 13)?;
            let w = konst(t, 3, 2, 14)?;
            let y = t.linear(a, w, Some(x))?;
            let y = t.square(y)?;
            weigh(t, y)
        }},
        KernelCase { name: "dropout", shape: (3, 3), positive: false, f: |t, x| {
            let mut rng = ChaCha8Rng::seed_from_u64(15);
            let y = t.dropout(x, 0.4, Some(&mut rng))?;
            let y = t.square(y)?;
            weigh(t, y)
        }},
        KernelCase { name: "mask_mul", shape: (2, 3), positive: false, f: |t, x| {
            let mask = DenseArray::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.5, 1.0, 0.0]])?;
            let y = t.mask_mul(x, mask)?;
            weigh(t, y)
        }},
        KernelCase { name: "concat_rows", shape: (2, 3), positive: false, f: |t, x| {
            let c = konst(t, 1, 3, 16)?;
            let y = t.concat_rows(&[c, x, x])?;
            let y = t.square(y)?;
            weigh(t, y)
        }},
        KernelCase { name: "concat_cols", shape: (2, 2), positive: false, f: |t, x| {
            let c = konst(t, 2, 1, 17)?;
            let y = t.concat_cols(&[x, c, x])?;
            let y = t.square(y)?;
            weigh(t, y)
        }},
        KernelCase { name: "slice_rows", shape: (4, 2), positive: false, f: |t, x| {
            let y = t.slice_rows(x, 1, 2)?;
            let y = t.square(y)?;
            weigh(t, y)
        }},
        KernelCase { name: "mean_rows", shape: (3, 2), positive: false, f: |t, x| {
            let y = t.mean_rows(x)?;
            let y = t.square(y)?;
            weigh(t, y)
        }},
        KernelCase { name: "l1_normalize", shape: (1, 4), positive: true, f: |t, x| {
            let y = t.l1_normalize(x)?;
            weigh(t, y)
        }},
        KernelCase { name: "row_dots", shape: (3, 2), positive: false, f: |t, x| {
            let c = konst(t, 3, 2, 18)?;
            let y = t.row_dots(x, c)?;
            let z = t.row_dots(x, x)?;
            let s = t.add(y, z)?;
            weigh(t, s)
        }},
        KernelCase { name: "square", shape: (2, 3), positive: false, f: |t, x| {
            let y = t.square(x)?;
            weigh(t, y)
        }},
        KernelCase { name: "mean_all", shape: (2, 3), positive: false, f: |t, x| {
            let y = t.square(x)?;
            t.mean_all(y)
        }},
        KernelCase { name: "sum_all", shape: (2, 3), positive: false, f: |t, x| {
            let y = t.square(x)?;
            t.sum_all(y)
        }},
        KernelCase { name: "log_prob", shape: (1, 3), positive: false, f: |t, x| {
            let p = t.softmax_rows(x)?;
            t.log_prob(p, 2)
        }},
        KernelCase { name: "cross_entropy", shape: (1, 3), positive: false, f: |t, x| {
            let p = t.softmax_rows(x)?;
            t.cross_entropy(p, 0)
        }},
    ]
}
