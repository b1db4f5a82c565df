//! Adaptive modality reliability estimation.
//!
//! Per sample, each modality gets two normalized importance scores:
//!
//! - confidence importance `α̂`: the unimodal head's probability for the
//!   label (training) or its top class (inference), L1-normalized over the
//!   three modalities;
//! - Fisher importance `β̂`: the squared norm of the gradient of the head's
//!   log-likelihood with respect to that modality's encoder and head
//!   parameters, L1-normalized likewise.
//!
//! They are blended per modality by `w = sigmoid(Δ)`, where `Δ` is the
//! relative growth of the Fisher trace since the previous epoch, giving the
//! fused importance `μ`. The modality with the largest `μ` is dominant.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoders::{self, Modality, ModalitySequence};
use crate::error::{contract, Result};
use crate::numcore::array::{self, l1_normalize3, sigmoid_scalar, DenseArray};
use crate::numcore::{ParamId, ParameterStore, Tape, Var};

/// Floor for the denominator of the relative Fisher growth.
pub const DELTA_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearParams {
    pub fn apply(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight)?;
        let b = tape.param(store, self.bias)?;
        tape.linear(x, w, Some(b))
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// How `μ` is formed. The non-default variants are the ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceMode {
    /// `w` from Fisher growth.
    #[default]
    Adaptive,
    /// `w = 0`: confidence only.
    ConfidenceOnly,
    /// `w = 1`: Fisher only.
    FisherOnly,
    /// `μ` fixed at (1/3, 1/3, 1/3).
    Uniform,
}

/// Whether `sigmoid(Δ)` is applied per modality or to the mean growth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    #[default]
    Elementwise,
    Scalar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub alpha_hat: [f64; 3],
    pub beta_hat: [f64; 3],
    pub w: [f64; 3],
    pub mu: [f64; 3],
    pub dominant: Modality,
    pub aux: [Modality; 2],
}

impl ImportanceVector {
    pub fn mu_of(&self, m: Modality) -> f64 {
        self.mu[m.index()]
    }
}

/// Class probabilities of a unimodal head on a pooled 1 × D feature.
pub fn head_probs(tape: &mut Tape, store: &ParameterStore, head: LinearParams, pooled: Var) -> Result<Var> {
    let logits = head.apply(tape, store, pooled)?;
    tape.softmax_rows(logits)
}

/// `α̂` from per-modality class distributions (in (V, A, L) order).
pub fn confidence_vector(probs: [&[f64]; 3], label: Option<usize>) -> Result<[f64; 3]> {
    let mut alpha = [0.0; 3];
    for (a, p) in alpha.iter_mut().zip(probs) {
        *a = match label {
            Some(c) => match p.get(c) {
                Some(&v) => v,
                None => return contract(format!("label {c} out of range for {} classes", p.len())),
            },
            None => p.iter().copied().fold(0.0, f64::max),
        };
    }
    Ok(l1_normalize3(alpha))
}

/// Sum over the three modalities of the head cross-entropies for one sample.
pub fn unimodal_loss_sample(tape: &mut Tape, probs: [Var; 3], label: usize) -> Result<Var> {
    let mut total: Option<Var> = None;
    for p in probs {
        let ce = tape.cross_entropy(p, label)?;
        total = Some(match total {
            Some(t) => tape.add(t, ce)?,
            None => ce,
        });
    }
    Ok(total.expect("three modalities"))
}

/// Mean over samples of [`unimodal_loss_sample`].
pub fn unimodal_loss(tape: &mut Tape, batch: &[([Var; 3], usize)]) -> Result<Var> {
    if batch.is_empty() {
        return contract("unimodal loss over an empty batch");
    }
    let mut total: Option<Var> = None;
    for &(probs, label) in batch {
        let l = unimodal_loss_sample(tape, probs, label)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    tape.scale(total.expect("non-empty"), 1.0 / batch.len() as f64)
}

/// Class whose log-likelihood is differentiated for the Fisher trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FisherTarget {
    Label(usize),
    Predicted,
}

/// Which head output the Fisher gradient is taken of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FisherSignal {
    /// `ln p(c | X_m)`. Its gradient carries a `1 − p_c` factor, so confident
    /// branches report small traces.
    LogLikelihood,
    /// The pre-softmax logit of class `c`: the head output itself.
    #[default]
    Logit,
}

/// Squared norm of the gradient of a log-likelihood with respect to `ids`.
///
/// `log_likelihood` records the forward pass on a private tape and returns
/// the scalar log-probability node; nothing is written to any training
/// gradient buffer.
pub fn log_likelihood_grad_sq_norm<F>(ids: &[ParamId], log_likelihood: F) -> Result<f64>
where
    F: FnOnce(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let ll = log_likelihood(&mut tape)?;
    Ok(tape.backward(ll)?.sq_norm_of(ids))
}

/// Single-sample Fisher trace of one modality branch (encoder + head).
/// An absent modality contributes zero.
#[allow(clippy::too_many_arguments)]
pub fn fisher_trace(
    store: &ParameterStore,
    encoder: ParamId,
    head: LinearParams,
    seq: &ModalitySequence,
    modality: Modality,
    tokens: usize,
    target: FisherTarget,
    signal: FisherSignal,
) -> Result<f64> {
    if !seq.is_live() {
        return Ok(0.0);
    }
    let ids = [encoder, head.weight, head.bias];
    log_likelihood_grad_sq_norm(&ids, |tape| {
        let enc = encoders::encode(tape, store, encoder, seq, modality, tokens)?;
        let pooled = encoders::pool(tape, enc.tokens)?;
        let logits = head.apply(tape, store, pooled)?;
        let probs = tape.softmax_rows(logits)?;
        let class = match target {
            FisherTarget::Label(c) => c,
            FisherTarget::Predicted => argmax(tape.value(probs).data()),
        };
        match signal {
            FisherSignal::LogLikelihood => tape.log_prob(probs, class),
            FisherSignal::Logit => {
                let classes = tape.value(logits).cols();
                if class >= classes {
                    return contract(format!("class index {class} out of range for {classes} classes"));
                }
                let mut onehot = DenseArray::zeros(1, classes);
                onehot.set(0, class, 1.0);
                let pick = tape.constant(onehot)?;
                let picked = tape.mul(logits, pick)?;
                tape.sum_all(picked)
            }
        }
    })
}

/// Index of the first largest entry.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `β̂`: L1-normalized traces, uniform when all traces vanish.
pub fn fisher_importance(traces: [f64; 3]) -> [f64; 3] {
    l1_normalize3(traces)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherRecord {
    pub sample_id: u64,
    pub epoch: usize,
    pub current: [f64; 3],
    pub previous: Option<[f64; 3]>,
}

/// Relative Fisher growth per modality; `None` before a previous epoch exists.
pub fn fisher_growth(record: &FisherRecord) -> Option<[f64; 3]> {
    let prev = record.previous?;
    let mut delta = [0.0; 3];
    for i in 0..3 {
        delta[i] = (record.current[i] - prev[i]) / record.current[i].max(DELTA_EPS);
    }
    Some(delta)
}

/// Blend weight `w` toward the Fisher importance; zero when no record or no
/// previous epoch is available.
pub fn fusion_weight(record: Option<&FisherRecord>, mode: WeightMode) -> [f64; 3] {
    let Some(delta) = record.and_then(fisher_growth) else {
        return [0.0; 3];
    };
    match mode {
        WeightMode::Elementwise => delta.map(sigmoid_scalar),
        WeightMode::Scalar => [sigmoid_scalar(delta.iter().sum::<f64>() / 3.0); 3],
    }
}

/// Dominant modality by largest value, ties resolved as L > A > V, followed
/// by the other two in that same order.
pub fn rank_modalities(mu: [f64; 3]) -> (Modality, [Modality; 2]) {
    let mut dominant = Modality::PRIORITY[0];
    for m in Modality::PRIORITY {
        if mu[m.index()] > mu[dominant.index()] {
            dominant = m;
        }
    }
    let mut rest = Modality::PRIORITY.into_iter().filter(|&m| m != dominant);
    let aux = [rest.next().unwrap(), rest.next().unwrap()];
    (dominant, aux)
}

/// `μ = (1 - w) ⊙ α̂ + w ⊙ β̂`, renormalized to sum to one.
pub fn modality_importance(alpha_hat: [f64; 3], beta_hat: [f64; 3], w: [f64; 3]) -> ImportanceVector {
    let mut raw = [0.0; 3];
    for i in 0..3 {
        raw[i] = (1.0 - w[i]) * alpha_hat[i] + w[i] * beta_hat[i];
    }
    let mu = l1_normalize3(raw);
    let (dominant, aux) = rank_modalities(mu);
    ImportanceVector {
        alpha_hat,
        beta_hat,
        w,
        mu,
        dominant,
        aux,
    }
}

/// Applies an [`ImportanceMode`] to the raw ingredients.
pub fn resolve_importance(
    mode: ImportanceMode,
    alpha_hat: [f64; 3],
    beta_hat: [f64; 3],
    adaptive_w: [f64; 3],
) -> ImportanceVector {
    match mode {
        ImportanceMode::Adaptive => modality_importance(alpha_hat, beta_hat, adaptive_w),
        ImportanceMode::ConfidenceOnly => modality_importance(alpha_hat, beta_hat, [0.0; 3]),
        ImportanceMode::FisherOnly => modality_importance(alpha_hat, beta_hat, [1.0; 3]),
        ImportanceMode::Uniform => {
            let mu = [1.0 / 3.0; 3];
            let (dominant, aux) = rank_modalities(mu);
            ImportanceVector {
                alpha_hat,
                beta_hat,
                w: adaptive_w,
                mu,
                dominant,
                aux,
            }
        }
    }
}

/// Per-sample Fisher records, rotated once per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FisherStore {
    records: BTreeMap<u64, FisherRecord>,
}

impl FisherStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, sample_id: u64) -> Option<&FisherRecord> {
        self.records.get(&sample_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FisherRecord> {
        self.records.values()
    }

    /// Moves the current traces to the previous slot and stores `traces` as
    /// the current epoch's values.
    pub fn rotate(&mut self, sample_id: u64, epoch: usize, traces: [f64; 3]) {
        let previous = self.records.get(&sample_id).map(|r| r.current);
        self.records.insert(
            sample_id,
            FisherRecord {
                sample_id,
                epoch,
                current: traces,
                previous,
            },
        );
    }

    pub fn insert(&mut self, record: FisherRecord) {
        self.records.insert(record.sample_id, record);
    }

    /// Per-modality mean of `w` over all records.
    pub fn mean_weight(&self, mode: WeightMode) -> [f64; 3] {
        if self.records.is_empty() {
            return [0.0; 3];
        }
        let mut acc = [0.0; 3];
        for r in self.records.values() {
            let w = fusion_weight(Some(r), mode);
            for i in 0..3 {
                acc[i] += w[i];
            }
        }
        acc.map(|v| v / self.records.len() as f64)
    }
}

/// Probability rows from a `[Var; 3]` of head outputs, read off the tape.
pub fn probs_values(tape: &Tape, probs: [Var; 3]) -> [DenseArray; 3] {
    probs.map(|p| tape.value(p).clone())
}

/// Value-only head evaluation.
pub fn head_probs_value(store: &ParameterStore, head: LinearParams, pooled: &DenseArray) -> Result<DenseArray> {
    let logits = array::linear(pooled, store.get(head.weight), Some(store.get(head.bias)))?;
    Ok(array::softmax_rows(&logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close3(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn confidence_vector_examples() {
        let p = |v: f64| [v, 1.0 - v];
        let (pv, pa, pl) = (p(0.2), p(0.3), p(0.5));
        let a = confidence_vector([&pv, &pa, &pl], Some(0)).unwrap();
        assert!(close3(a, [0.2, 0.3, 0.5], 1e-15));
        let (pv, pa, pl) = (p(0.9), p(0.09), p(0.01));
        let a = confidence_vector([&pv, &pa, &pl], Some(0)).unwrap();
        assert!(close3(a, [0.9, 0.09, 0.01], 1e-15));
        let same = [0.4, 0.6];
        let a = confidence_vector([&same, &same, &same], None).unwrap();
        assert!(close3(a, [1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn inference_confidence_uses_top_class() {
        let (pv, pa, pl) = ([0.1, 0.9], [0.5, 0.5], [0.7, 0.3]);
        let a = confidence_vector([&pv, &pa, &pl], None).unwrap();
        assert!(close3(a, [0.9 / 2.1, 0.5 / 2.1, 0.7 / 2.1], 1e-15));
    }

    #[test]
    fn unimodal_loss_examples() {
        let mut tape = Tape::new();
        let one = tape.constant(DenseArray::row_vector(&[0.0, 1.0, 0.0])).unwrap();
        let l = unimodal_loss_sample(&mut tape, [one, one, one], 1).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);

        let u = tape.constant(DenseArray::row_vector(&[1.0 / 3.0; 3])).unwrap();
        let l = unimodal_loss_sample(&mut tape, [u, u, u], 2).unwrap();
        assert!((tape.value(l).item().unwrap() - 3.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unimodal_loss_is_batch_mean() {
        // Per-sample sums of 1.0 and 3.0: each head gets p_label = e^{-1/3} or e^{-1}.
        let mut tape = Tape::new();
        let mk = |tape: &mut Tape, loss_each: f64| {
            let p = (-loss_each).exp();
            tape.constant(DenseArray::row_vector(&[p, 1.0 - p])).unwrap()
        };
        let a = mk(&mut tape, 1.0 / 3.0);
        let b = mk(&mut tape, 1.0);
        let l = unimodal_loss(&mut tape, &[([a, a, a], 0), ([b, b, b], 0)]).unwrap();
        assert!((tape.value(l).item().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fisher_importance_examples() {
        assert!(close3(fisher_importance([1.0, 1.0, 2.0]), [0.25, 0.25, 0.5], 0.0));
        assert!(close3(fisher_importance([0.0; 3]), [1.0 / 3.0; 3], 0.0));
        assert!(close3(fisher_importance([5.0, 0.0, 0.0]), [1.0, 0.0, 0.0], 0.0));
    }

    #[test]
    fn fusion_weight_examples() {
        let rec = |cur: [f64; 3], prev: Option<[f64; 3]>| FisherRecord {
            sample_id: 0,
            epoch: 1,
            current: cur,
            previous: prev,
        };
        assert_eq!(fusion_weight(Some(&rec([1.0; 3], Some([1.0; 3]))), WeightMode::Elementwise), [0.5; 3]);
        assert_eq!(fusion_weight(Some(&rec([1.0; 3], None)), WeightMode::Elementwise), [0.0; 3]);
        assert_eq!(fusion_weight(None, WeightMode::Elementwise), [0.0; 3]);
        let w = fusion_weight(Some(&rec([2.0, 2.0, 2.0], Some([1.0, 1.0, 1.0]))), WeightMode::Elementwise);
        // sigmoid(0.5) = 1 / (1 + e^{-0.5})
        let expected = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((w[0] - expected).abs() < 1e-15);
        assert!((expected - 0.622_459_3).abs() < 1e-7);
        // Zero current trace is guarded.
        let w = fusion_weight(Some(&rec([0.0, 1.0, 1.0], Some([0.5, 1.0, 1.0]))), WeightMode::Elementwise);
        assert!(w[0].is_finite() && w[0] < 1e-6);
    }

    #[test]
    fn scalar_weight_mode_broadcasts_mean_growth() {
        let r = FisherRecord {
            sample_id: 0,
            epoch: 2,
            current: [2.0, 1.0, 4.0],
            previous: Some([1.0, 1.0, 1.0]),
        };
        let w = fusion_weight(Some(&r), WeightMode::Scalar);
        let expected = sigmoid_scalar((0.5 + 0.0 + 0.75) / 3.0);
        assert_eq!(w, [expected; 3]);
    }

    #[test]
    fn importance_endpoints() {
        let a = [0.5, 0.3, 0.2];
        let b = [0.1, 0.1, 0.8];
        let iv = modality_importance(a, b, [0.0; 3]);
        assert_eq!(iv.mu, a);
        assert_eq!(iv.dominant, Modality::Visual);
        let iv = modality_importance(a, b, [1.0; 3]);
        assert_eq!(iv.mu, b);
        assert_eq!(iv.dominant, Modality::Language);
    }

    #[test]
    fn ties_prefer_language_then_acoustic() {
        let u = [1.0 / 3.0; 3];
        let iv = modality_importance(u, u, [0.3, 0.9, 0.1]);
        assert_eq!(iv.dominant, Modality::Language);
        assert_eq!(iv.aux, [Modality::Acoustic, Modality::Visual]);
        let (d, aux) = rank_modalities([0.4, 0.4, 0.2]);
        assert_eq!(d, Modality::Acoustic);
        assert_eq!(aux, [Modality::Language, Modality::Visual]);
    }

    #[test]
    fn uniform_mode_fixes_mu() {
        let iv = resolve_importance(ImportanceMode::Uniform, [0.9, 0.05, 0.05], [0.8, 0.1, 0.1], [0.5; 3]);
        assert_eq!(iv.mu, [1.0 / 3.0; 3]);
        assert_eq!(iv.dominant, Modality::Language);
    }

    #[test]
    fn store_rotation() {
        let mut s = FisherStore::new();
        s.rotate(4, 0, [1.0, 2.0, 3.0]);
        assert_eq!(s.get(4).unwrap().previous, None);
        s.rotate(4, 1, [2.0, 2.0, 2.0]);
        let r = s.get(4).unwrap();
        assert_eq!(r.previous, Some([1.0, 2.0, 3.0]));
        assert_eq!(r.current, [2.0, 2.0, 2.0]);
        assert_eq!(r.epoch, 1);
    }

    #[test]
    fn dead_encoder_leaves_only_the_head_bias() {
        // Negative encoder weights on positive frames: ReLU outputs zero, so
        // the pooled feature and every weight gradient vanish.
        let mut store = ParameterStore::new();
        let enc = store.add("enc", DenseArray::filled(3, 4, -1.0)).unwrap();
        let head = LinearParams {
            weight: store.add("hw", DenseArray::filled(4, 2, 0.5)).unwrap(),
            bias: store.add("hb", DenseArray::zeros(1, 2)).unwrap(),
        };
        let seq = ModalitySequence::new(DenseArray::filled(4, 3, 1.0), vec![true; 4]).unwrap();
        let trace = |signal| fisher_trace(&store, enc, head, &seq, Modality::Visual, 2, FisherTarget::Label(1), signal).unwrap();
        // d z_1 / d b = e_1.
        assert_eq!(trace(FisherSignal::Logit), 1.0);
        // d ln p_1 / d b = e_1 − (1/2, 1/2).
        assert_eq!(trace(FisherSignal::LogLikelihood), 0.5);
    }

    #[test]
    fn logistic_fisher_trace() {
        // p(y=1) = sigmoid(w x) as softmax over logits [0, w x]; w = 0, x = 1.
        let mut store = ParameterStore::new();
        let w = store.add("w", DenseArray::scalar(0.0)).unwrap();
        let trace = log_likelihood_grad_sq_norm(&[w], |t| {
            let x = t.constant(DenseArray::scalar(1.0))?;
            let wv = t.param(&store, w)?;
            let z = t.matmul(x, wv)?;
            let zero = t.constant(DenseArray::scalar(0.0))?;
            let logits = t.concat_cols(&[zero, z])?;
            let p = t.softmax_rows(logits)?;
            t.log_prob(p, 1)
        })
        .unwrap();
        assert!((trace - 0.25).abs() < 1e-15);

        let doubled = log_likelihood_grad_sq_norm(&[w], |t| {
            let x = t.constant(DenseArray::scalar(1.0))?;
            let wv = t.param(&store, w)?;
            let z = t.matmul(x, wv)?;
            let zero = t.constant(DenseArray::scalar(0.0))?;
            let logits = t.concat_cols(&[zero, z])?;
            let p = t.softmax_rows(logits)?;
            let lp = t.log_prob(p, 1)?;
            t.scale(lp, 2.0)
        })
        .unwrap();
        assert!((doubled - 4.0 * trace).abs() < 1e-15);
    }
}
