//! Metrics, missingness sweeps and diagnostics over a trained predictor.
//!
//! Every masked condition derives its per-sample masks from
//! `(seed, condition, sample id)`, and per-sample results are aggregated in
//! sample-id order, so tables are reproducible bit-for-bit and independent
//! of dataset order and thread count.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amre::argmax;
use crate::datagen::{self, Dataset, GroundTruth, ModalitySubset};
use crate::encoders::SampleRecord;
use crate::error::{contract, Result};
use crate::seed::{self, stream};
use crate::training::Predictor;

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// The intra-modality rates of the degradation curve.
pub fn default_rates() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    pub acc: f64,
    pub mae: Option<f64>,
}

/// Which F1 the tables report.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Mode {
    /// F1 of class 1 against the rest.
    #[default]
    Binary,
    /// Per-class F1 weighted by label support.
    Weighted,
}

fn f1_for_class(predicted: &[usize], labels: &[usize], positive: usize) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &y) in predicted.iter().zip(labels) {
        match (p == positive, y == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Binary F1 (positive class 1) and accuracy from predicted classes.
pub fn classification_metrics(predicted: &[usize], labels: &[usize]) -> Result<(f64, f64)> {
    classification_metrics_with(predicted, labels, F1Mode::Binary)
}

/// F1 under `mode` and accuracy from predicted classes.
pub fn classification_metrics_with(predicted: &[usize], labels: &[usize], mode: F1Mode) -> Result<(f64, f64)> {
    if predicted.is_empty() || predicted.len() != labels.len() {
        return contract(format!(
            "metrics need equal non-empty inputs, got {} predictions and {} labels",
            predicted.len(),
            labels.len()
        ));
    }
    let correct = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    let f1 = match mode {
        F1Mode::Binary => f1_for_class(predicted, labels, 1),
        F1Mode::Weighted => {
            let classes = labels.iter().max().copied().unwrap_or(0) + 1;
            (0..classes)
                .map(|c| {
                    let support = labels.iter().filter(|&&y| y == c).count();
                    if support == 0 {
                        0.0
                    } else {
                        support as f64 * f1_for_class(predicted, labels, c)
                    }
                })
                .sum::<f64>()
                / labels.len() as f64
        }
    };
    Ok((f1, correct as f64 / labels.len() as f64))
}

/// Metrics from class distributions. MAE compares the expected class index
/// with the regression score and is reported only when every sample has one.
pub fn metrics(probs: &[Vec<f64>], labels: &[usize], scores: &[Option<f64>], mode: F1Mode) -> Result<Metrics> {
    if probs.len() != scores.len() {
        return contract("scores and predictions differ in length");
    }
    let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let (f1, acc) = classification_metrics_with(&predicted, labels, mode)?;
    let mae = if scores.iter().all(Option::is_some) {
        let total: f64 = probs
            .iter()
            .zip(scores)
            .map(|(p, s)| {
                let expected: f64 = p.iter().enumerate().map(|(c, q)| c as f64 * q).sum();
                (expected - s.expect("checked")).abs()
            })
            .sum();
        Some(total / probs.len() as f64)
    } else {
        None
    };
    Ok(Metrics { f1, acc, mae })
}

/// Predicts every sample (in parallel) and scores the batch in sample-id order.
pub fn evaluate(predictor: &Predictor, samples: &[SampleRecord], mode: F1Mode) -> Result<Metrics> {
    let mut rows: Vec<(u64, Vec<f64>, usize, Option<f64>)> = samples
        .par_iter()
        .map(|s| Ok((s.id, predictor.predict(s)?, s.label, s.score)))
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.0);
    let probs: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    let labels: Vec<usize> = rows.iter().map(|r| r.2).collect();
    let scores: Vec<Option<f64>> = rows.iter().map(|r| r.3).collect();
    metrics(&probs, &labels, &scores, mode)
}

/// Seed of the masks for an intra-rate condition.
pub fn intra_mask_seed(seed: u64, p: f64) -> u64 {
    seed::derive(&[seed, stream::EVAL_MASK, p.to_bits()])
}

/// The dataset's samples with intra-modality masks drawn from `mask_seed`.
pub fn mask_intra(samples: &[SampleRecord], p: f64, mask_seed: u64) -> Result<Vec<SampleRecord>> {
    samples
        .par_iter()
        .map(|s| {
            let mut m = s.clone();
            datagen::apply_intra_mask(&mut m, p, &mut seed::rng_for(&[mask_seed, s.id]))?;
            Ok(m)
        })
        .collect()
}

pub fn mask_inter(samples: &[SampleRecord], subset: ModalitySubset) -> Vec<SampleRecord> {
    samples
        .iter()
        .map(|s| {
            let mut m = s.clone();
            datagen::apply_inter_mask(&mut m, subset);
            m
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Condition {
    Intra { p: f64 },
    Inter { subset: ModalitySubset },
    /// Mean of the six conditions with at least one modality missing.
    Average,
}

impl Condition {
    pub fn label(&self) -> String {
        match self {
            Condition::Intra { p } => format!("p={p:.1}"),
            Condition::Inter { subset } => {
                let letters: Vec<String> = subset.to_string().chars().map(String::from).collect();
                format!("{{{}}}", letters.join(","))
            }
            Condition::Average => "Avg.".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub condition: Condition,
    pub samples: usize,
    pub seeds: Vec<u64>,
    /// Exact mask seed used for each entry of `seeds`.
    pub mask_seeds: Vec<u64>,
    pub per_seed: Vec<Metrics>,
    pub mean: Metrics,
    /// Population standard deviation over seeds.
    pub std: Metrics,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summarize(per_seed: &[Metrics]) -> (Metrics, Metrics) {
    let f1: Vec<f64> = per_seed.iter().map(|m| m.f1).collect();
    let acc: Vec<f64> = per_seed.iter().map(|m| m.acc).collect();
    let (f1m, f1s) = mean_std(&f1);
    let (accm, accs) = mean_std(&acc);
    let (maem, maes) = if per_seed.iter().all(|m| m.mae.is_some()) {
        let mae: Vec<f64> = per_seed.iter().map(|m| m.mae.expect("checked")).collect();
        let (m, s) = mean_std(&mae);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    (
        Metrics {
            f1: f1m,
            acc: accm,
            mae: maem,
        },
        Metrics {
            f1: f1s,
            acc: accs,
            mae: maes,
        },
    )
}

/// One row per rate; each rate is evaluated under every seed's masks.
pub fn sweep_intra(
    predictor: &Predictor,
    dataset: &Dataset,
    rates: &[f64],
    seeds: &[u64],
    mode: F1Mode,
) -> Result<Vec<SweepResult>> {
    if seeds.is_empty() {
        return contract("a sweep needs at least one seed");
    }
    let mut rows = Vec::with_capacity(rates.len());
    for &p in rates {
        if !(0.0..=1.0).contains(&p) {
            return contract(format!("missing rate {p} outside [0,1]"));
        }
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut mask_seeds = Vec::with_capacity(seeds.len());
        for &s in seeds {
            let ms = intra_mask_seed(s, p);
            per_seed.push(evaluate(predictor, &mask_intra(&dataset.samples, p, ms)?, mode)?);
            mask_seeds.push(ms);
        }
        let (mean, std) = summarize(&per_seed);
        rows.push(SweepResult {
            condition: Condition::Intra { p },
            samples: dataset.len(),
            seeds: seeds.to_vec(),
            mask_seeds,
            per_seed,
            mean,
            std,
        });
    }
    Ok(rows)
}

/// The seven subsets in table order, then the six-condition average.
/// Subset masks are deterministic, so every seed sees the same inputs; the
/// seeds are kept for the record.
pub fn sweep_inter(predictor: &Predictor, dataset: &Dataset, seeds: &[u64], mode: F1Mode) -> Result<Vec<SweepResult>> {
    if seeds.is_empty() {
        return contract("a sweep needs at least one seed");
    }
    let mut rows = Vec::with_capacity(8);
    for subset in ModalitySubset::table_order() {
        let m = evaluate(predictor, &mask_inter(&dataset.samples, subset), mode)?;
        let per_seed = vec![m; seeds.len()];
        let (mean, std) = summarize(&per_seed);
        rows.push(SweepResult {
            condition: Condition::Inter { subset },
            samples: dataset.len(),
            seeds: seeds.to_vec(),
            mask_seeds: vec![0; seeds.len()],
            per_seed,
            mean,
            std,
        });
    }
    let missing: Vec<&SweepResult> = rows
        .iter()
        .filter(|r| !matches!(r.condition, Condition::Inter { subset } if subset.is_full()))
        .collect();
    let per_seed: Vec<Metrics> = (0..seeds.len())
        .map(|i| {
            let f1 = missing.iter().map(|r| r.per_seed[i].f1).sum::<f64>() / missing.len() as f64;
            let acc = missing.iter().map(|r| r.per_seed[i].acc).sum::<f64>() / missing.len() as f64;
            let mae = missing
                .iter()
                .map(|r| r.per_seed[i].mae)
                .sum::<Option<f64>>()
                .map(|t| t / missing.len() as f64);
            Metrics { f1, acc, mae }
        })
        .collect();
    let (mean, std) = summarize(&per_seed);
    rows.push(SweepResult {
        condition: Condition::Average,
        samples: dataset.len(),
        seeds: seeds.to_vec(),
        mask_seeds: vec![0; seeds.len()],
        per_seed,
        mean,
        std,
    });
    Ok(rows)
}

/// Angle in degrees between two vectors; `None` if either has zero norm.
pub fn angle_degrees(u: &[f64], v: &[f64]) -> Option<f64> {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    if u == v {
        // The rounded cosine can sit an ulp below 1.
        return Some(0.0);
    }
    Some((dot / (nu * nv)).clamp(-1.0, 1.0).acos().to_degrees())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagnostic {
    pub p: f64,
    pub mask_seed: u64,
    pub mean_degrees: f64,
    pub measured: usize,
    pub skipped: usize,
}

/// Mean angle between each sample's pooled final features with and
/// without intra-modality masking at rate `p`.
pub fn phase_difference(predictor: &Predictor, dataset: &Dataset, p: f64, seed: u64) -> Result<PhaseDiagnostic> {
    let mask_seed = intra_mask_seed(seed, p);
    let masked = mask_intra(&dataset.samples, p, mask_seed)?;
    let mut angles: Vec<(u64, Option<f64>)> = dataset
        .samples
        .par_iter()
        .zip(&masked)
        .map(|(clean, noisy)| {
            let v = predictor.inspect(clean)?.pooled_by_modality;
            let u = predictor.inspect(noisy)?.pooled_by_modality;
            Ok((clean.id, angle_degrees(&u, &v)))
        })
        .collect::<Result<_>>()?;
    angles.sort_by_key(|a| a.0);
    let measured: Vec<f64> = angles.iter().filter_map(|a| a.1).collect();
    let mean = if measured.is_empty() {
        0.0
    } else {
        measured.iter().sum::<f64>() / measured.len() as f64
    };
    Ok(PhaseDiagnostic {
        p,
        mask_seed,
        mean_degrees: mean,
        measured: measured.len(),
        skipped: angles.len() - measured.len(),
    })
}

/// Mean `|cos(proj, res)|` over all decompositions of all samples.
pub fn mean_abs_cos(predictor: &Predictor, samples: &[SampleRecord]) -> Result<f64> {
    let mut rows: Vec<(u64, Vec<f64>)> = samples
        .par_iter()
        .map(|s| Ok((s.id, predictor.inspect(s)?.proj_res_abs_cos)))
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.0);
    let all: Vec<f64> = rows.into_iter().flat_map(|r| r.1).collect();
    if all.is_empty() {
        return contract("no non-degenerate decompositions to measure");
    }
    Ok(all.iter().sum::<f64>() / all.len() as f64)
}

/// Fraction of samples whose dominant modality is the informative one.
pub fn routing_accuracy(predictor: &Predictor, samples: &[SampleRecord], truth: &[GroundTruth]) -> Result<f64> {
    if samples.len() != truth.len() || samples.is_empty() {
        return contract("routing accuracy needs one ground-truth entry per sample");
    }
    let hits: Vec<bool> = samples
        .par_iter()
        .zip(truth)
        .map(|(s, t)| {
            if s.id != t.sample_id {
                return contract(format!("ground truth for {} paired with sample {}", t.sample_id, s.id));
            }
            Ok(predictor.inspect(s)?.importance.dominant == t.informative)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Mean μ over samples, in (V, A, L) order.
pub fn mean_importance(predictor: &Predictor, samples: &[SampleRecord]) -> Result<[f64; 3]> {
    let mut rows: Vec<(u64, [f64; 3])> = samples
        .par_iter()
        .map(|s| Ok((s.id, predictor.inspect(s)?.importance.mu)))
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.0);
    let mut acc = [0.0; 3];
    for (_, mu) in &rows {
        for i in 0..3 {
            acc[i] += mu[i] / rows.len() as f64;
        }
    }
    Ok(acc)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

/// Tab-separated table, one row per condition.
pub fn sweep_table(rows: &[SweepResult]) -> String {
    let mut out = String::from("condition\tsamples\tf1_mean\tf1_std\tacc_mean\tacc_std\tmae_mean\tmae_std\tseeds\tmask_seeds\n");
    for r in rows {
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}",
            r.condition.label(),
            r.samples,
            r.mean.f1,
            r.std.f1,
            r.mean.acc,
            r.std.acc,
            fmt_opt(r.mean.mae),
            fmt_opt(r.std.mae),
            join(&r.seeds),
            join(&r.mask_seeds),
        );
    }
    out
}

pub fn write_sweep_table(rows: &[SweepResult], path: &Path) -> Result<()> {
    std::fs::write(path, sweep_table(rows))?;
    Ok(())
}

/// Parses `(condition, f1_mean)` pairs back out of a sweep table.
pub fn read_f1_column(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let f1 = cols
            .get(2)
            .and_then(|c| c.parse::<f64>().ok())
            .ok_or_else(|| crate::PrlfError::Parse {
                line: i + 1,
                message: "expected a numeric f1_mean column".into(),
            })?;
        out.push((cols[0].to_string(), f1));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions() {
        let (f1, acc) = classification_metrics(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        assert_eq!((f1, acc), (1.0, 1.0));
    }

    #[test]
    fn weighted_f1_by_hand() {
        // Class 0: P=1, R=1/2, F1=2/3. Class 1: P=2/3, R=1, F1=4/5. Two of each.
        let (f1, acc) = classification_metrics_with(&[0, 1, 1, 1], &[0, 0, 1, 1], F1Mode::Weighted).unwrap();
        assert!((f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert_eq!(acc, 0.75);
    }

    #[test]
    fn all_positive_predictions() {
        let (f1, acc) = classification_metrics(&[1, 1, 1, 1], &[1, 0, 1, 0]).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn no_positives_gives_zero_f1() {
        let (f1, acc) = classification_metrics(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(f1, 0.0);
        assert_eq!(acc, 1.0);
        assert!(classification_metrics(&[], &[]).is_err());
        assert!(classification_metrics(&[0], &[0, 1]).is_err());
    }

    fn oracle(pred: &[usize], labels: &[usize]) -> (f64, f64) {
        let mut cm = [[0usize; 2]; 2];
        for (&p, &y) in pred.iter().zip(labels) {
            cm[y.min(1)][p.min(1)] += 1;
        }
        let tp = cm[1][1] as f64;
        let p = if cm[0][1] + cm[1][1] == 0 { 0.0 } else { tp / (cm[0][1] + cm[1][1]) as f64 };
        let r = if cm[1][0] + cm[1][1] == 0 { 0.0 } else { tp / (cm[1][0] + cm[1][1]) as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let acc = pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64;
        (f1, acc)
    }

    #[test]
    fn agrees_with_confusion_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.gen_range(1..40);
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            assert_eq!(classification_metrics(&pred, &labels).unwrap(), oracle(&pred, &labels));
        }
    }

    #[test]
    fn mae_uses_expected_class() {
        let m = metrics(&[vec![0.25, 0.75], vec![1.0, 0.0]], &[1, 0], &[Some(1.0), Some(0.0)], F1Mode::Binary).unwrap();
        assert_eq!(m.mae, Some(0.125));
        let m = metrics(&[vec![0.25, 0.75]], &[1], &[None], F1Mode::Binary).unwrap();
        assert_eq!(m.mae, None);
    }

    #[test]
    fn angles() {
        assert_eq!(angle_degrees(&[1.0, 0.0], &[0.0, 2.0]), Some(90.0));
        assert_eq!(angle_degrees(&[1.0, 2.0], &[1.0, 2.0]), Some(0.0));
        assert_eq!(angle_degrees(&[0.0, 0.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn condition_labels() {
        assert_eq!(Condition::Intra { p: 0.3 }.label(), "p=0.3");
        let s: ModalitySubset = "la".parse().unwrap();
        assert_eq!(Condition::Inter { subset: s }.label(), "{l,a}");
        assert_eq!(Condition::Average.label(), "Avg.");
    }

    #[test]
    fn table_round_trip_of_f1() {
        let m = Metrics {
            f1: 0.5,
            acc: 0.75,
            mae: None,
        };
        let row = SweepResult {
            condition: Condition::Intra { p: 0.2 },
            samples: 4,
            seeds: vec![1, 2],
            mask_seeds: vec![9, 10],
            per_seed: vec![m, m],
            mean: m,
            std: Metrics {
                f1: 0.0,
                acc: 0.0,
                mae: None,
            },
        };
        let text = sweep_table(&[row]);
        assert_eq!(read_f1_column(&text).unwrap(), vec![("p=0.2".to_string(), 0.5)]);
        assert!(text.contains("\t9,10\n"));
    }
}
