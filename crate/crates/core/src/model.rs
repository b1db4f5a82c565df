//! The full network: encoders, unimodal heads, importance routing, the
//! interaction loop and the final classifier over `[dom; aux1; aux2]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::amre::{
    self, confidence_vector, fisher_importance, fusion_weight, resolve_importance, FisherRecord, FisherSignal, FisherTarget,
    ImportanceMode, ImportanceVector, LinearParams, WeightMode,
};
use crate::encoders::{self, Modality, ModalityDims, SampleRecord};
use crate::error::{Result, PrlfError};
use crate::numcore::array;
use crate::numcore::{ParamId, ParameterStore, Tape, Var};
use crate::proginteract::{self, InteractionConfig, InteractionOutput, InteractionParams};
use crate::seed::{self, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Per-modality (frames, width) in (V, A, L) order.
    pub dims: [ModalityDims; 3],
    pub tokens: usize,
    pub width: usize,
    pub classes: usize,
    pub importance: ImportanceMode,
    pub weight_mode: WeightMode,
    pub fisher_signal: FisherSignal,
    pub interaction: InteractionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: [
                ModalityDims { frames: 16, dim: 20 },
                ModalityDims { frames: 16, dim: 20 },
                ModalityDims { frames: 16, dim: 32 },
            ],
            tokens: 8,
            width: 64,
            classes: 2,
            importance: ImportanceMode::Adaptive,
            weight_mode: WeightMode::Elementwise,
            fisher_signal: FisherSignal::Logit,
            interaction: InteractionConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tokens == 0 || self.width == 0 {
            return Err(PrlfError::Config("tokens and width must be positive".into()));
        }
        if self.classes < 2 {
            return Err(PrlfError::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        for (m, d) in Modality::ALL.iter().zip(&self.dims) {
            if d.frames == 0 || d.dim == 0 {
                return Err(PrlfError::Config(format!("modality {m} has an empty shape")));
            }
            if d.frames < self.tokens {
                return Err(PrlfError::Config(format!(
                    "modality {m}: {} frames cannot fill {} tokens",
                    d.frames, self.tokens
                )));
            }
        }
        self.interaction.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Bias-free d_m × D projections, indexed by [`Modality::index`].
    pub encoders: [ParamId; 3],
    pub heads: [LinearParams; 3],
    pub interaction: InteractionParams,
    /// 3D × C over `[dom; aux1; aux2]`.
    pub classifier: LinearParams,
}

impl ModelParams {
    pub fn register<R: Rng + ?Sized>(store: &mut ParameterStore, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let (d, c) = (config.width, config.classes);
        let mut encoders = Vec::with_capacity(3);
        let mut heads = Vec::with_capacity(3);
        for m in Modality::ALL {
            let dims = config.dims[m.index()];
            encoders.push(store.add_glorot(format!("encoder.{}.w", m.letter()), dims.dim, d, rng)?);
            heads.push(LinearParams {
                weight: store.add_glorot(format!("head.{}.w", m.letter()), d, c, rng)?,
                bias: store.add_zeros(format!("head.{}.b", m.letter()), 1, c)?,
            });
        }
        let interaction = InteractionParams::register(store, d, config.interaction.share_decomposer, rng)?;
        let classifier = LinearParams {
            weight: store.add_glorot("classifier.w", 3 * d, c, rng)?,
            bias: store.add_zeros("classifier.b", 1, c)?,
        };
        Ok(Self {
            encoders: [encoders[0], encoders[1], encoders[2]],
            heads: [heads[0], heads[1], heads[2]],
            interaction,
            classifier,
        })
    }
}

/// How importance is obtained for one forward pass.
#[derive(Clone, Copy, Debug)]
pub enum ForwardMode<'a> {
    /// Confidence on the label, Fisher importance and growth from the
    /// sample's record of the previous epoch.
    Train {
        label: usize,
        record: Option<&'a FisherRecord>,
    },
    /// Confidence on the top class, a fresh Fisher trace on the predicted
    /// class, and a frozen blend weight.
    Infer { w: [f64; 3] },
    /// Importance supplied by the caller and treated as a constant.
    Fixed(&'a ImportanceVector),
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// 1 × C class distribution.
    pub probs: Var,
    /// Unimodal head distributions in (V, A, L) order.
    pub head_probs: [Var; 3],
    /// 1 × 3D classifier input.
    pub fused: Var,
    pub importance: ImportanceVector,
    pub interaction: InteractionOutput,
    pub live: [bool; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub eta1: f64,
    pub eta2: f64,
}

impl LossWeights {
    pub const DEFAULT: LossWeights = LossWeights { eta1: 0.5, eta2: 0.1 };
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub task: f64,
    pub uni: f64,
    pub phase: f64,
    pub total: f64,
}

/// `L_task + η1 L_uni + η2 L_phase`.
pub fn total_loss(task: f64, uni: f64, phase: f64, weights: LossWeights) -> f64 {
    task + weights.eta1 * uni + weights.eta2 * phase
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParameterStore,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, master_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng_for(&[master_seed, stream::INIT]);
        let mut store = ParameterStore::new();
        let params = ModelParams::register(&mut store, &config, &mut rng)?;
        Ok(Self { config, store, params })
    }

    /// Rebuilds a model around stored parameter values, checking that the
    /// names and shapes match the layout implied by `config`.
    pub fn from_store(config: ModelConfig, store: ParameterStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.store.len() != store.len() {
            return Err(PrlfError::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.store.len(),
                store.len()
            )));
        }
        for (_, name, value) in store.iter() {
            let id = model
                .store
                .id(name)
                .ok_or_else(|| PrlfError::Checkpoint(format!("unexpected parameter {name}")))?;
            if model.store.get(id).shape() != value.shape() {
                return Err(PrlfError::Checkpoint(format!("parameter {name} has the wrong shape")));
            }
            model.store.set(id, value.clone())?;
        }
        Ok(model)
    }

    pub fn tokens(&self) -> usize {
        self.config.tokens
    }

    /// Fisher traces of the three branches for one sample.
    pub fn fisher_traces(&self, sample: &SampleRecord, target: FisherTarget) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for m in Modality::ALL {
            let i = m.index();
            out[i] = amre::fisher_trace(
                &self.store,
                self.params.encoders[i],
                self.params.heads[i],
                sample.modality(m),
                m,
                self.config.tokens,
                target,
                self.config.fisher_signal,
            )?;
        }
        Ok(out)
    }

    /// Records the full forward pass on `tape`. Dropout is active only when
    /// `rng` is supplied.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        sample: &SampleRecord,
        mode: ForwardMode<'_>,
        rng: Option<&mut R>,
    ) -> Result<ForwardOutput> {
        sample.check_dims(&self.config.dims)?;
        let store = &self.store;
        let k = self.config.tokens;

        let mut feats = Vec::with_capacity(3);
        let mut heads = Vec::with_capacity(3);
        let mut live = [false; 3];
        for m in Modality::ALL {
            let i = m.index();
            let enc = encoders::encode(tape, store, self.params.encoders[i], sample.modality(m), m, k)?;
            live[i] = enc.live;
            let pooled = encoders::pool(tape, enc.tokens)?;
            heads.push(amre::head_probs(tape, store, self.params.heads[i], pooled)?);
            feats.push(enc.tokens);
        }
        let head_probs = [heads[0], heads[1], heads[2]];
        let features = [feats[0], feats[1], feats[2]];

        let pv = head_probs.map(|p| tape.value(p).data().to_vec());
        let prob_slices = [pv[0].as_slice(), pv[1].as_slice(), pv[2].as_slice()];
        let (alpha, beta, w) = match mode {
            ForwardMode::Train { label, record } => {
                if label >= self.config.classes {
                    return crate::error::contract(format!(
                        "label {label} out of range for {} classes",
                        self.config.classes
                    ));
                }
                let alpha = confidence_vector(prob_slices, Some(label))?;
                let beta = fisher_importance(record.map_or([0.0; 3], |r| r.current));
                (alpha, beta, fusion_weight(record, self.config.weight_mode))
            }
            ForwardMode::Infer { w } => {
                let alpha = confidence_vector(prob_slices, None)?;
                let beta = match self.config.importance {
                    ImportanceMode::ConfidenceOnly | ImportanceMode::Uniform => [1.0 / 3.0; 3],
                    _ => fisher_importance(self.fisher_traces(sample, FisherTarget::Predicted)?),
                };
                (alpha, beta, w)
            }
            ForwardMode::Fixed(given) => (given.alpha_hat, given.beta_hat, given.w),
        };
        let importance = match mode {
            ForwardMode::Fixed(given) => given.clone(),
            _ => resolve_importance(self.config.importance, alpha, beta, w),
        };

        let interaction = proginteract::run_iterations(
            tape,
            store,
            &self.params.interaction,
            features,
            &importance,
            &self.config.interaction,
            rng,
        )?;

        let order = [importance.dominant, importance.aux[0], importance.aux[1]];
        let mut pooled = Vec::with_capacity(3);
        for m in order {
            pooled.push(encoders::pool(tape, interaction.by_modality[m.index()])?);
        }
        let fused = tape.concat_cols(&pooled)?;
        let logits = self.params.classifier.apply(tape, store, fused)?;
        let probs = tape.softmax_rows(logits)?;
        Ok(ForwardOutput {
            probs,
            head_probs,
            fused,
            importance,
            interaction,
            live,
        })
    }

    /// Per-sample objective. Returns the total loss node and its components.
    pub fn sample_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        sample: &SampleRecord,
        record: Option<&FisherRecord>,
        weights: LossWeights,
        rng: Option<&mut R>,
    ) -> Result<(Var, LossComponents, ForwardOutput)> {
        let mode = ForwardMode::Train {
            label: sample.label,
            record,
        };
        self.loss_with_mode(tape, sample, mode, weights, rng)
    }

    /// [`Model::sample_loss`] under an arbitrary forward mode.
    pub fn loss_with_mode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        sample: &SampleRecord,
        mode: ForwardMode<'_>,
        weights: LossWeights,
        rng: Option<&mut R>,
    ) -> Result<(Var, LossComponents, ForwardOutput)> {
        let label = sample.label;
        let out = self.forward(tape, sample, mode, rng)?;
        let task = tape.cross_entropy(out.probs, label)?;
        let uni = amre::unimodal_loss_sample(tape, out.head_probs, label)?;
        let uni_w = tape.scale(uni, weights.eta1)?;
        let phase_w = tape.scale(out.interaction.phase_loss, weights.eta2)?;
        let total = tape.add(task, uni_w)?;
        let total = tape.add(total, phase_w)?;
        let comps = LossComponents {
            task: tape.value(task).item()?,
            uni: tape.value(uni).item()?,
            phase: tape.value(out.interaction.phase_loss).item()?,
            total: tape.value(total).item()?,
        };
        Ok((total, comps, out))
    }

    /// Class distribution at inference with dropout off.
    pub fn predict(&self, sample: &SampleRecord, w: [f64; 3]) -> Result<Vec<f64>> {
        Ok(self.inspect(sample, w)?.probs)
    }

    /// Inference forward pass, returning the values of interest.
    pub fn inspect(&self, sample: &SampleRecord, w: [f64; 3]) -> Result<Inspection> {
        let mut tape = Tape::new();
        let out = self.forward::<rand_chacha::ChaCha8Rng>(&mut tape, sample, ForwardMode::Infer { w }, None)?;
        let mut cos = Vec::with_capacity(out.interaction.traces.len());
        for tr in &out.interaction.traces {
            let p = tape.value(tr.decomposition.proj);
            let r = tape.value(tr.decomposition.res);
            let pn = p.sq_norm().sqrt();
            let rn = r.sq_norm().sqrt();
            if pn > 0.0 && rn > 0.0 {
                let dot: f64 = p.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
                cos.push((dot / (pn * rn)).abs());
            }
        }
        let mut pooled = Vec::with_capacity(self.config.width * 3);
        for f in out.interaction.by_modality {
            pooled.extend_from_slice(array::mean_rows(tape.value(f)).data());
        }
        Ok(Inspection {
            probs: tape.value(out.probs).data().to_vec(),
            fused: tape.value(out.fused).data().to_vec(),
            pooled_by_modality: pooled,
            importance: out.importance,
            proj_res_abs_cos: cos,
        })
    }
}

/// Values read from one inference pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Inspection {
    pub probs: Vec<f64>,
    /// Pooled `[dom; aux1; aux2]` classifier input.
    pub fused: Vec<f64>,
    /// Pooled final features in (V, A, L) order, independent of routing.
    pub pooled_by_modality: Vec<f64>,
    pub importance: ImportanceVector,
    /// `|cos(proj, res)|` for every decomposition with non-zero parts.
    pub proj_res_abs_cos: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::ModalitySequence;
    use crate::numcore::array::DenseArray;
    use crate::numcore::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            dims: [
                ModalityDims { frames: 4, dim: 3 },
                ModalityDims { frames: 4, dim: 2 },
                ModalityDims { frames: 4, dim: 3 },
            ],
            tokens: 2,
            width: 4,
            classes: 2,
            interaction: InteractionConfig {
                steps: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn random_sample(config: &ModelConfig, id: u64, label: usize, rng: &mut ChaCha8Rng) -> SampleRecord {
        let mods = config.dims.map(|d| {
            ModalitySequence::new(DenseArray::uniform(d.frames, d.dim, 1.0, rng), vec![true; d.frames]).unwrap()
        });
        SampleRecord {
            id,
            label,
            score: None,
            modalities: mods,
        }
    }

    #[test]
    fn parameter_layout() {
        let cfg = ModelConfig::default();
        let m = Model::new(cfg, 1).unwrap();
        let d = 64;
        assert_eq!(m.store.get(m.params.encoders[2]).dims(), (32, d));
        assert_eq!(m.store.get(m.params.classifier.weight).dims(), (3 * d, 2));
        let dp = m.params.interaction.decomposers[0];
        assert_eq!(m.store.get(dp.gate_w1).dims(), (2 * d, d));
        assert_eq!(m.params.interaction.decomposers.len(), 3);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(1.0, 2.0, 3.0, LossWeights::DEFAULT), 1.0 + 0.5 * 2.0 + 0.1 * 3.0);
        assert!((total_loss(1.0, 2.0, 3.0, LossWeights::DEFAULT) - 2.3).abs() < 1e-15);
        assert_eq!(total_loss(0.7, 9.0, 4.0, LossWeights { eta1: 0.0, eta2: 0.0 }), 0.7);
    }

    #[test]
    fn sample_loss_components_combine() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_sample(&cfg, 0, 1, &mut rng);
        let mut tape = Tape::new();
        let (_, c, _) = model
            .sample_loss::<ChaCha8Rng>(&mut tape, &s, None, LossWeights::DEFAULT, None)
            .unwrap();
        assert!((c.total - total_loss(c.task, c.uni, c.phase, LossWeights::DEFAULT)).abs() < 1e-12);
        let mut tape = Tape::new();
        let (_, z, _) = model
            .sample_loss::<ChaCha8Rng>(&mut tape, &s, None, LossWeights { eta1: 0.0, eta2: 0.0 }, None)
            .unwrap();
        assert_eq!(z.total, z.task);
    }

    #[test]
    fn full_forward_gradient_check() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_sample(&cfg, 0, 1, &mut rng);
        // μ is a constant of the interaction loop, so it is pinned here.
        let imp = amre::modality_importance([0.2, 0.3, 0.5], [0.4, 0.4, 0.2], [0.6, 0.5, 0.4]);
        let err = grad_check_params(&model.store, |tape, store| {
            let m = Model {
                config: model.config.clone(),
                store: store.clone(),
                params: model.params.clone(),
            };
            let mode = ForwardMode::Fixed(&imp);
            let (loss, _, _) = m.loss_with_mode::<ChaCha8Rng>(tape, &s, mode, LossWeights::DEFAULT, None)?;
            Ok(loss)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn predict_is_a_deterministic_distribution() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_sample(&cfg, 0, 0, &mut rng);
        let p1 = model.predict(&s, [0.5; 3]).unwrap();
        let p2 = model.predict(&s, [0.5; 3]).unwrap();
        assert_eq!(p1, p2);
        assert!((p1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_share_one_prediction() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut a = random_sample(&cfg, 0, 0, &mut rng);
        let mut b = random_sample(&cfg, 1, 1, &mut rng);
        for m in Modality::ALL {
            a.modality_mut(m).drop_all();
            b.modality_mut(m).drop_all();
        }
        assert_eq!(model.predict(&a, [0.3; 3]).unwrap(), model.predict(&b, [0.3; 3]).unwrap());
    }

    #[test]
    fn uniform_importance_routes_to_language() {
        let mut cfg = tiny_config();
        cfg.importance = ImportanceMode::Uniform;
        let model = Model::new(cfg.clone(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = random_sample(&cfg, 0, 0, &mut rng);
        let ins = model.inspect(&s, [0.0; 3]).unwrap();
        assert_eq!(ins.importance.mu, [1.0 / 3.0; 3]);
        assert_eq!(ins.importance.dominant, Modality::Language);
    }

    #[test]
    fn store_round_trip_rebuilds_model() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 13).unwrap();
        let rebuilt = Model::from_store(cfg, model.store.clone()).unwrap();
        assert_eq!(rebuilt.store, model.store);
        assert_eq!(rebuilt.params, model.params);
    }

    #[test]
    fn wrong_shape_sample_is_rejected() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 14).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut s = random_sample(&cfg, 0, 0, &mut rng);
        s.modalities[0] = ModalitySequence::new(DenseArray::zeros(4, 5), vec![true; 4]).unwrap();
        assert!(model.predict(&s, [0.0; 3]).is_err());
    }
}
