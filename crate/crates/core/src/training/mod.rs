//! Objective, optimizer and the epoch loop.
//!
//! Each epoch draws fresh intra-modality masks for every training sample,
//! runs minibatch updates on `L_task + η1 L_uni + η2 L_phase`, then computes
//! the per-sample Fisher traces of the three branches with the updated
//! parameters and rotates them into the [`FisherStore`].
//!
//! Per-sample gradients are computed on private tapes (in parallel when
//! rayon has more than one thread) and summed in sample order, so results
//! do not depend on the thread count.

mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{Optimizer, OptimizerKind};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amre::{FisherStore, FisherTarget};
use crate::datagen::{self, Dataset};
use crate::encoders::{Modality, SampleRecord};
use crate::error::{PrlfError, Result};
use crate::model::{Inspection, LossComponents, LossWeights, Model, ModelConfig};
use crate::numcore::{Gradients, Tape};
use crate::seed::{self, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta1: f64,
    pub eta2: f64,
    pub lr: f64,
    pub momentum: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub p_train: f64,
    pub seed: u64,
    /// Batch gradients with a larger global norm are rescaled to this norm;
    /// 0 disables clipping. The squared inner product in `L_phase` grows with
    /// the fourth power of feature scale, so one oversized step can otherwise
    /// run away within a couple of batches.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta1: 0.5,
            eta2: 0.1,
            lr: 0.05,
            momentum: 0.9,
            optimizer: OptimizerKind::Sgd,
            epochs: 20,
            batch_size: 32,
            p_train: 0.5,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PrlfError::Config(m));
        if !(self.eta1 >= 0.0 && self.eta2 >= 0.0) {
            return bad(format!("loss weights must be non-negative, got {} and {}", self.eta1, self.eta2));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0,1)", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return bad(format!("clip_norm must be finite and non-negative, got {}", self.clip_norm));
        }
        if !(0.0..=1.0).contains(&self.p_train) {
            return bad(format!("p_train {} outside [0,1]", self.p_train));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            eta1: self.eta1,
            eta2: self.eta2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Seed from which this epoch's per-sample masks were derived.
    pub mask_seed: u64,
    /// Sample-weighted means over the epoch.
    pub loss: LossComponents,
    pub train_accuracy: f64,
    pub batches: usize,
    /// Mean blend weight used in this epoch's forward passes.
    pub mean_w: [f64; 3],
    pub mean_mu: [f64; 3],
    /// How often each modality (V, A, L) was dominant.
    pub dominant_counts: [usize; 3],
    /// Per-modality mean Fisher trace after the epoch.
    pub mean_trace: [f64; 3],
    pub clamped_probs: usize,
    /// Batches whose gradient was rescaled by `clip_norm`.
    #[serde(default)]
    pub clipped_batches: usize,
}

/// A trained model with its frozen inference blend weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub model: Model,
    pub w: [f64; 3],
}

impl Predictor {
    pub fn predict(&self, sample: &SampleRecord) -> Result<Vec<f64>> {
        self.model.predict(sample, self.w)
    }

    pub fn inspect(&self, sample: &SampleRecord) -> Result<Inspection> {
        self.model.inspect(sample, self.w)
    }
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub fisher: FisherStore,
    pub optimizer: Optimizer,
    /// Number of completed epochs.
    pub epoch: usize,
    pub inference_w: [f64; 3],
    pub history: Vec<EpochStats>,
}

struct SampleResult {
    grads: Gradients,
    loss: LossComponents,
    correct: bool,
    w: [f64; 3],
    mu: [f64; 3],
    dominant: Modality,
    clamped: usize,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(model_config, config.seed)?;
        let optimizer = Optimizer::new(config.optimizer, config.lr, config.momentum, &model.store);
        Ok(Self {
            model,
            config,
            fisher: FisherStore::new(),
            optimizer,
            epoch: 0,
            inference_w: [0.0; 3],
            history: Vec::new(),
        })
    }

    /// `hash(seed, epoch)` for the training masks.
    pub fn epoch_mask_seed(&self, epoch: usize) -> u64 {
        seed::derive(&[self.config.seed, stream::TRAIN_MASK, epoch as u64])
    }

    /// A sample as seen in `epoch`, with that epoch's intra-modality mask.
    pub fn masked_for_epoch(&self, sample: &SampleRecord, epoch: usize) -> Result<SampleRecord> {
        let mut s = sample.clone();
        if self.config.p_train > 0.0 {
            let mut rng = seed::rng_for(&[self.epoch_mask_seed(epoch), sample.id]);
            datagen::apply_intra_mask(&mut s, self.config.p_train, &mut rng)?;
        }
        Ok(s)
    }

    fn sample_step(&self, sample: &SampleRecord, epoch: usize) -> Result<SampleResult> {
        let mut tape = Tape::new();
        let mut rng = seed::rng_for(&[self.config.seed, stream::DROPOUT, epoch as u64, sample.id]);
        let record = self.fisher.get(sample.id);
        let (loss, comps, out) =
            self.model
                .sample_loss(&mut tape, sample, record, self.config.loss_weights(), Some(&mut rng))?;
        let probs = tape.value(out.probs).data().to_vec();
        let correct = crate::amre::argmax(&probs) == sample.label;
        let clamped = tape.clamp_count();
        let mut grads = Gradients::zeros_like(&self.model.store);
        tape.backward(loss)?.accumulate_into(&mut grads);
        Ok(SampleResult {
            grads,
            loss: comps,
            correct,
            w: out.importance.w,
            mu: out.importance.mu,
            dominant: out.importance.dominant,
            clamped,
        })
    }

    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochStats> {
        if data.is_empty() {
            return crate::error::contract("cannot train on an empty dataset");
        }
        if data.classes != self.model.config.classes {
            return Err(PrlfError::Config(format!(
                "dataset has {} classes but the model expects {}",
                data.classes, self.model.config.classes
            )));
        }
        let epoch = self.epoch;
        let masked: Vec<SampleRecord> = data
            .samples
            .par_iter()
            .map(|s| self.masked_for_epoch(s, epoch))
            .collect::<Result<_>>()?;

        let mut order: Vec<usize> = (0..masked.len()).collect();
        order.shuffle(&mut seed::rng_for(&[self.config.seed, stream::SHUFFLE, epoch as u64]));

        let n = masked.len() as f64;
        let mut loss = LossComponents::default();
        let mut correct = 0usize;
        let mut w_sum = [0.0; 3];
        let mut mu_sum = [0.0; 3];
        let mut dominant_counts = [0usize; 3];
        let mut clamped = 0usize;
        let mut batches = 0usize;
        let mut clipped_batches = 0usize;

        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let results: Vec<SampleResult> = chunk
                .par_iter()
                .map(|&i| self.sample_step(&masked[i], epoch))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    PrlfError::NonFinite { .. } => PrlfError::NonFiniteLoss {
                        epoch,
                        batch: b,
                        sample_ids: chunk.iter().map(|&i| masked[i].id).collect(),
                    },
                    other => other,
                })?;
            let mut grads = Gradients::zeros_like(&self.model.store);
            for r in &results {
                grads.add_assign(&r.grads);
            }
            grads.scale(1.0 / chunk.len() as f64);
            let batch_total: f64 = results.iter().map(|r| r.loss.total).sum();
            if !batch_total.is_finite() || !grads.is_finite() {
                return Err(PrlfError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    sample_ids: chunk.iter().map(|&i| masked[i].id).collect(),
                });
            }
            let norm = grads.sq_norm().sqrt();
            if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
                grads.scale(self.config.clip_norm / norm);
                clipped_batches += 1;
            }
            self.optimizer.step(&mut self.model.store, &grads);
            for r in &results {
                loss.task += r.loss.task / n;
                loss.uni += r.loss.uni / n;
                loss.phase += r.loss.phase / n;
                loss.total += r.loss.total / n;
                correct += r.correct as usize;
                for i in 0..3 {
                    w_sum[i] += r.w[i] / n;
                    mu_sum[i] += r.mu[i] / n;
                }
                dominant_counts[r.dominant.index()] += 1;
                clamped += r.clamped;
            }
            batches += 1;
        }

        let traces: Vec<[f64; 3]> = masked
            .par_iter()
            .map(|s| self.model.fisher_traces(s, FisherTarget::Label(s.label)))
            .collect::<Result<_>>()?;
        let mut mean_trace = [0.0; 3];
        for (s, t) in masked.iter().zip(&traces) {
            self.fisher.rotate(s.id, epoch, *t);
            for i in 0..3 {
                mean_trace[i] += t[i] / n;
            }
        }
        self.inference_w = self.fisher.mean_weight(self.model.config.weight_mode);
        self.epoch += 1;

        let stats = EpochStats {
            epoch,
            mask_seed: self.epoch_mask_seed(epoch),
            loss,
            train_accuracy: correct as f64 / n,
            batches,
            mean_w: w_sum,
            mean_mu: mu_sum,
            dominant_counts,
            mean_trace,
            clamped_probs: clamped,
            clipped_batches,
        };
        self.history.push(stats.clone());
        Ok(stats)
    }

    /// Runs the configured number of epochs.
    pub fn fit(&mut self, data: &Dataset) -> Result<Vec<EpochStats>> {
        (0..self.config.epochs).map(|_| self.train_epoch(data)).collect()
    }

    pub fn predictor(&self) -> Predictor {
        Predictor {
            model: self.model.clone(),
            w: self.inference_w,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_config: self.model.config.clone(),
            train_config: self.config.clone(),
            store: self.model.store.clone(),
            fisher: self.fisher.clone(),
            inference_w: self.inference_w,
            epoch: self.epoch as u64,
            rng_digest: seed::derive(&[self.config.seed, self.epoch as u64]),
        }
    }
}

/// Class distribution for one sample under a checkpoint.
pub fn predict(sample: &SampleRecord, checkpoint: &Checkpoint) -> Result<Vec<f64>> {
    checkpoint.predictor()?.predict(sample)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::datagen::{generate, Split, SynthConfig};
    use crate::encoders::ModalityDims;
    use crate::proginteract::InteractionConfig;

    pub(crate) fn small_model() -> ModelConfig {
        ModelConfig {
            dims: [
                ModalityDims { frames: 8, dim: 6 },
                ModalityDims { frames: 8, dim: 6 },
                ModalityDims { frames: 8, dim: 8 },
            ],
            tokens: 4,
            width: 8,
            interaction: InteractionConfig {
                steps: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn small_data(samples: usize) -> Dataset {
        let cfg = SynthConfig {
            samples,
            dims: small_model().dims,
            key_frames: 2,
            seed: 3,
            ..Default::default()
        };
        generate(&cfg, Split::Train).unwrap().dataset
    }

    fn small_train(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_stats() {
        let data = small_data(40);
        let mut a = Trainer::new(small_model(), small_train(2)).unwrap();
        let mut b = Trainer::new(small_model(), small_train(2)).unwrap();
        assert_eq!(a.fit(&data).unwrap(), b.fit(&data).unwrap());
        assert_eq!(a.model.store, b.model.store);
    }

    #[test]
    fn early_epochs_use_zero_blend_weight() {
        let data = small_data(24);
        let mut t = Trainer::new(small_model(), small_train(3)).unwrap();
        let stats = t.fit(&data).unwrap();
        assert_eq!(stats[0].mean_w, [0.0; 3]);
        assert_eq!(stats[1].mean_w, [0.0; 3]);
        assert!(stats[2].mean_w.iter().all(|&w| w > 0.0 && w < 1.0));
    }

    #[test]
    fn fisher_rotation_tracks_previous_epoch() {
        let data = small_data(16);
        let mut t = Trainer::new(small_model(), small_train(1)).unwrap();
        t.train_epoch(&data).unwrap();
        let after0: Vec<_> = t.fisher.iter().cloned().collect();
        assert!(after0.iter().all(|r| r.previous.is_none() && r.epoch == 0));
        t.train_epoch(&data).unwrap();
        for (r0, r1) in after0.iter().zip(t.fisher.iter()) {
            assert_eq!(r1.previous, Some(r0.current));
            assert_eq!(r1.epoch, 1);
        }
    }

    #[test]
    fn no_masking_at_zero_rate_and_store_still_filled() {
        let data = small_data(10);
        let cfg = TrainConfig {
            p_train: 0.0,
            ..small_train(1)
        };
        let mut t = Trainer::new(small_model(), cfg).unwrap();
        for s in &data.samples {
            assert_eq!(&t.masked_for_epoch(s, 0).unwrap(), s);
        }
        t.train_epoch(&data).unwrap();
        assert_eq!(t.fisher.len(), 10);
    }

    #[test]
    fn epoch_masks_differ_between_epochs() {
        let data = small_data(1);
        let t = Trainer::new(small_model(), small_train(1)).unwrap();
        let a = t.masked_for_epoch(&data.samples[0], 0).unwrap();
        let b = t.masked_for_epoch(&data.samples[0], 1).unwrap();
        assert_ne!(a, b);
        assert_ne!(t.epoch_mask_seed(0), t.epoch_mask_seed(1));
    }

    #[test]
    fn exploding_learning_rate_reports_batch() {
        let data = small_data(16);
        let cfg = TrainConfig {
            lr: 1e200,
            ..small_train(3)
        };
        let mut t = Trainer::new(small_model(), cfg).unwrap();
        match t.fit(&data) {
            Err(PrlfError::NonFiniteLoss { sample_ids, .. }) => assert!(!sample_ids.is_empty()),
            other => panic!("expected a non-finite failure, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = TrainConfig {
            p_train: 1.5,
            ..Default::default()
        };
        assert!(matches!(Trainer::new(small_model(), cfg), Err(PrlfError::Config(_))));
        for clip_norm in [-1.0, f64::NAN, f64::INFINITY] {
            let cfg = TrainConfig {
                clip_norm,
                ..Default::default()
            };
            assert!(matches!(Trainer::new(small_model(), cfg), Err(PrlfError::Config(_))));
        }
    }

    #[test]
    fn clipping_bounds_every_step() {
        let data = small_data(16);
        let clipped = |clip_norm: f64| {
            let cfg = TrainConfig {
                clip_norm,
                momentum: 0.0,
                ..small_train(1)
            };
            let mut t = Trainer::new(small_model(), cfg.clone()).unwrap();
            let before = t.model.store.clone();
            let stats = t.train_epoch(&data).unwrap();
            let moved: f64 = before
                .iter()
                .zip(t.model.store.iter())
                .map(|((_, _, a), (_, _, b))| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            (stats, moved, cfg.lr)
        };
        // Two plain SGD steps of norm at most lr * clip_norm each.
        let (stats, moved, lr) = clipped(1e-3);
        assert_eq!(stats.clipped_batches, stats.batches);
        assert!(moved <= 2.0 * lr * 1e-3 * (1.0 + 1e-12), "{moved}");
        let (stats, _, _) = clipped(0.0);
        assert_eq!(stats.clipped_batches, 0);
    }
}
