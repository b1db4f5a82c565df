//! SGD with momentum and Adam over a [`ParameterStore`].

use serde::{Deserialize, Serialize};

use crate::numcore::{Gradients, ParameterStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64, store: &ParameterStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, v)| vec![0.0; v.len()]).collect();
        let second = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam => zeros.clone(),
        };
        Self {
            kind,
            lr,
            momentum,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            first: zeros,
            second,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update. For SGD: `v ← m v + g`, `θ ← θ − lr v`. For Adam the
    /// momentum field is β1.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) {
        self.steps += 1;
        let t = self.steps as i32;
        for (id, g) in grads.iter() {
            let theta = store.get_mut(id).data_mut();
            let m = &mut self.first[id.index()];
            match self.kind {
                OptimizerKind::Sgd => {
                    for ((p, v), &gi) in theta.iter_mut().zip(m.iter_mut()).zip(g.data()) {
                        *v = self.momentum * *v + gi;
                        *p -= self.lr * *v;
                    }
                }
                OptimizerKind::Adam => {
                    let s = &mut self.second[id.index()];
                    let b1 = self.momentum;
                    let c1 = 1.0 - b1.powi(t);
                    let c2 = 1.0 - self.beta2.powi(t);
                    for (((p, mi), si), &gi) in theta.iter_mut().zip(m.iter_mut()).zip(s.iter_mut()).zip(g.data()) {
                        *mi = b1 * *mi + (1.0 - b1) * gi;
                        *si = self.beta2 * *si + (1.0 - self.beta2) * gi * gi;
                        *p -= self.lr * (*mi / c1) / ((*si / c2).sqrt() + self.eps);
                    }
                }
            }
        }
    }
}
