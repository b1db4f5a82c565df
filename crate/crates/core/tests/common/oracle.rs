//! Forward-mode oracle for a branch's Fisher trace.
//!
//! The branch (bias-free projection, ReLU, masked segment means, token mean,
//! linear head) is re-derived here with dual numbers, one parameter entry at
//! a time, sharing no code with the tape.

use prlf::amre::FisherSignal;
use prlf::numcore::DenseArray;

#[derive(Clone, Copy, Debug)]
struct Dual {
    v: f64,
    d: f64,
}

impl Dual {
    fn c(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
    fn relu(self) -> Dual {
        if self.v > 0.0 { self } else { Dual::c(0.0) }
    }
    fn exp(self) -> Dual {
        let e = self.v.exp();
        Dual { v: e, d: self.d * e }
    }
    fn ln(self) -> Dual {
        Dual { v: self.v.ln(), d: self.d / self.v }
    }
}

pub struct Branch<'a> {
    pub frames: &'a DenseArray,
    pub mask: &'a [bool],
    /// d × D projection.
    pub enc: &'a DenseArray,
    /// D × C head weight.
    pub head_w: &'a DenseArray,
    /// 1 × C head bias.
    pub head_b: &'a DenseArray,
    pub tokens: usize,
}

/// Which entry carries the unit tangent: (array 0..3, flat index).
type Seed = (usize, usize);

fn lift(a: &DenseArray, which: usize, seed: Seed) -> Vec<Dual> {
    a.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual { v, d: if seed == (which, i) { 1.0 } else { 0.0 } })
        .collect()
}

fn output(b: &Branch, class: usize, signal: FisherSignal, seed: Seed) -> Dual {
    let (t_len, d_in) = (b.frames.rows(), b.frames.cols());
    let width = b.enc.cols();
    let classes = b.head_w.cols();
    let enc = lift(b.enc, 0, seed);
    let hw = lift(b.head_w, 1, seed);
    let hb = lift(b.head_b, 2, seed);
    let x = b.frames.data();

    let act: Vec<Vec<Dual>> = (0..t_len)
        .map(|t| {
            (0..width)
                .map(|j| {
                    let mut s = Dual::c(0.0);
                    for i in 0..d_in {
                        s = s.add(Dual::c(x[t * d_in + i]).mul(enc[i * width + j]));
                    }
                    s.relu()
                })
                .collect()
        })
        .collect();

    let mut pooled = vec![Dual::c(0.0); width];
    for k in 0..b.tokens {
        let lo = k * t_len / b.tokens;
        let hi = (k + 1) * t_len / b.tokens;
        let live: Vec<usize> = (lo..hi).filter(|&t| b.mask[t]).collect();
        if live.is_empty() {
            continue;
        }
        for j in 0..width {
            let mut s = Dual::c(0.0);
            for &t in &live {
                s = s.add(act[t][j]);
            }
            let token = s.mul(Dual::c(1.0 / live.len() as f64));
            pooled[j] = pooled[j].add(token.mul(Dual::c(1.0 / b.tokens as f64)));
        }
    }

    let logits: Vec<Dual> = (0..classes)
        .map(|c| {
            let mut z = hb[c];
            for j in 0..width {
                z = z.add(pooled[j].mul(hw[j * classes + c]));
            }
            z
        })
        .collect();

    match signal {
        FisherSignal::Logit => logits[class],
        FisherSignal::LogLikelihood => {
            let mut total = Dual::c(0.0);
            for z in &logits {
                total = total.add(z.exp());
            }
            logits[class].add(total.ln().mul(Dual::c(-1.0)))
        }
    }
}

/// Sum over every branch parameter entry of the squared derivative of the
/// target output, each derivative taken in its own forward pass.
pub fn brute_force_trace(b: &Branch, class: usize, signal: FisherSignal) -> f64 {
    let sizes = [b.enc.len(), b.head_w.len(), b.head_b.len()];
    let mut total = 0.0;
    for (which, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let g = output(b, class, signal, (which, i)).d;
            total += g * g;
        }
    }
    total
}
