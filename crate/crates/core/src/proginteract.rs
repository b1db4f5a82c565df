//! Progressive interaction between the three modality token features.
//!
//! Each iteration refines every modality on its own, lets every modality
//! attend to the other two with importance-scaled queries and keys, mixes
//! the two paths with a schedule that moves from self to cross features, and
//! finally pulls each auxiliary modality toward the dominant one through a
//! gated projection, an orthogonality penalty and a denoised residual.
//!
//! One parameter set is shared by all iterations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::amre::ImportanceVector;
use crate::encoders::Modality;
use crate::error::{contract, Result};
use crate::numcore::array::{self, DenseArray};
use crate::numcore::{ParamId, ParameterStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecomposerParams {
    /// 2D × D
    pub gate_w1: ParamId,
    pub gate_b1: ParamId,
    /// D × D
    pub gate_w2: ParamId,
    pub gate_b2: ParamId,
    /// D × D denoiser
    pub denoise: ParamId,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// Gate from pooled features, broadcast over tokens.
    #[default]
    Pooled,
    /// One gate row per token.
    Tokenwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractionConfig {
    pub steps: usize,
    pub gamma: f64,
    pub refine_dropout: f64,
    pub denoise_dropout: f64,
    pub gate_mode: GateMode,
    /// When false the cross-modal path contributes zero.
    pub cross_path: bool,
    pub share_decomposer: bool,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            steps: 4,
            gamma: 0.8,
            refine_dropout: 0.1,
            denoise_dropout: 0.1,
            gate_mode: GateMode::Pooled,
            cross_path: true,
            share_decomposer: false,
        }
    }
}

impl InteractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(crate::PrlfError::Config("steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(crate::PrlfError::Config(format!("gamma {} outside [0,1]", self.gamma)));
        }
        for (name, r) in [("refine_dropout", self.refine_dropout), ("denoise_dropout", self.denoise_dropout)] {
            if !(0.0..1.0).contains(&r) {
                return Err(crate::PrlfError::Config(format!("{name} {r} outside [0,1)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionParams {
    /// Indexed by [`Modality::index`].
    pub refine: [RefineParams; 3],
    /// One entry when shared, otherwise indexed by the auxiliary modality.
    pub decomposers: Vec<DecomposerParams>,
}

impl InteractionParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        width: usize,
        share_decomposer: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut refine = Vec::with_capacity(3);
        for m in Modality::ALL {
            let p = format!("interact.refine.{}", m.letter());
            refine.push(RefineParams {
                w1: store.add_glorot(format!("{p}.w1"), width, width, rng)?,
                b1: store.add_zeros(format!("{p}.b1"), 1, width)?,
                w2: store.add_glorot(format!("{p}.w2"), width, width, rng)?,
                b2: store.add_zeros(format!("{p}.b2"), 1, width)?,
            });
        }
        let names: Vec<String> = if share_decomposer {
            vec!["shared".into()]
        } else {
            Modality::ALL.iter().map(|m| m.letter().to_string()).collect()
        };
        let mut decomposers = Vec::with_capacity(names.len());
        for n in names {
            let p = format!("interact.decomposer.{n}");
            decomposers.push(DecomposerParams {
                gate_w1: store.add_glorot(format!("{p}.gate_w1"), 2 * width, width, rng)?,
                gate_b1: store.add_zeros(format!("{p}.gate_b1"), 1, width)?,
                gate_w2: store.add_glorot(format!("{p}.gate_w2"), width, width, rng)?,
                gate_b2: store.add_zeros(format!("{p}.gate_b2"), 1, width)?,
                denoise: store.add_glorot(format!("{p}.denoise"), width, width, rng)?,
            });
        }
        Ok(Self {
            refine: [refine[0], refine[1], refine[2]],
            decomposers,
        })
    }

    pub fn decomposer_for(&self, aux: Modality) -> &DecomposerParams {
        if self.decomposers.len() == 1 {
            &self.decomposers[0]
        } else {
            &self.decomposers[aux.index()]
        }
    }
}

fn reborrow<'a, R: ?Sized>(rng: &'a mut Option<&mut R>) -> Option<&'a mut R> {
    rng.as_deref_mut()
}

/// `f + Dropout(ReLU(f W1 + b1) W2 + b2)`, row-wise over tokens.
pub fn self_refine<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &RefineParams,
    f: Var,
    dropout: f64,
    rng: Option<&mut R>,
) -> Result<Var> {
    let w1 = tape.param(store, params.w1)?;
    let b1 = tape.param(store, params.b1)?;
    let w2 = tape.param(store, params.w2)?;
    let b2 = tape.param(store, params.b2)?;
    let h = tape.linear(f, w1, Some(b1))?;
    let h = tape.relu(h)?;
    let h = tape.linear(h, w2, Some(b2))?;
    let h = tape.dropout(h, dropout, rng)?;
    tape.add(f, h)
}

fn attention(tape: &mut Tape, queries: Var, keys: Var, values: Var) -> Result<Var> {
    let width = tape.value(queries).cols();
    let kt = tape.transpose(keys)?;
    let scores = tape.matmul(queries, kt)?;
    let scores = tape.scale(scores, 1.0 / (width as f64).sqrt())?;
    let weights = tape.softmax_rows(scores)?;
    tape.matmul(weights, values)
}

/// `softmax((μ_m f_m)(μ_n f_n)ᵀ / √D) (μ_m f_m)`.
pub fn cross_attend(tape: &mut Tape, f_m: Var, f_n: Var, mu_m: f64, mu_n: f64) -> Result<Var> {
    let q = tape.scale(f_m, mu_m)?;
    let k = tape.scale(f_n, mu_n)?;
    attention(tape, q, k, q)
}

/// Row-softmax attention weights of [`cross_attend`], for inspection.
pub fn cross_attention_weights(f_m: &DenseArray, f_n: &DenseArray, mu_m: f64, mu_n: f64) -> Result<DenseArray> {
    let q = array::scale(f_m, mu_m);
    let k = array::scale(f_n, mu_n);
    let s = array::matmul(&q, &array::transpose(&k))?;
    Ok(array::softmax_rows(&array::scale(&s, 1.0 / (f_m.cols() as f64).sqrt())))
}

/// Self-attention over the 2K stacked rows of both cross features, reduced
/// back to K rows by averaging the two halves.
pub fn fuse_cross(tape: &mut Tape, x1: Var, x2: Var) -> Result<Var> {
    let k = tape.value(x1).rows();
    let fc = tape.concat_rows(&[x1, x2])?;
    let attended = attention(tape, fc, fc, fc)?;
    let top = tape.slice_rows(attended, 0, k)?;
    let bottom = tape.slice_rows(attended, k, k)?;
    let sum = tape.add(top, bottom)?;
    tape.scale(sum, 0.5)
}

/// `λ_t = 1 - t / max(1, steps - 1)`, evaluated as `(steps - 1 - t) / (steps - 1)`
/// so that every value is the correctly rounded ratio.
pub fn lambda_schedule(t: usize, steps: usize) -> Result<f64> {
    if steps == 0 || t >= steps {
        return contract(format!("schedule step {t} outside 0..{steps}"));
    }
    if steps == 1 {
        return Ok(1.0);
    }
    Ok((steps - 1 - t) as f64 / (steps - 1) as f64)
}

/// `λ f_self + (1 - λ) f_cross`.
pub fn mix(tape: &mut Tape, f_self: Var, f_cross: Var, lambda: f64) -> Result<Var> {
    let a = tape.scale(f_self, lambda)?;
    let b = tape.scale(f_cross, 1.0 - lambda)?;
    tape.add(a, b)
}

#[derive(Clone, Copy, Debug)]
pub struct Decomposition {
    pub gate: Var,
    pub proj: Var,
    pub res: Var,
}

/// The gate network's output for a dominant/auxiliary pair.
pub fn gate(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &DecomposerParams,
    f_dom: Var,
    f_aux: Var,
    mode: GateMode,
) -> Result<Var> {
    let joint = match mode {
        GateMode::Pooled => {
            let pd = tape.mean_rows(f_dom)?;
            let pa = tape.mean_rows(f_aux)?;
            tape.concat_cols(&[pd, pa])?
        }
        GateMode::Tokenwise => tape.concat_cols(&[f_dom, f_aux])?,
    };
    let w1 = tape.param(store, params.gate_w1)?;
    let b1 = tape.param(store, params.gate_b1)?;
    let w2 = tape.param(store, params.gate_w2)?;
    let b2 = tape.param(store, params.gate_b2)?;
    let h = tape.linear(joint, w1, Some(b1))?;
    let h = tape.relu(h)?;
    let g = tape.linear(h, w2, Some(b2))?;
    tape.sigmoid(g)
}

/// Splits `f_aux` into `proj = g ⊙ f_dom` and `res = f_aux - proj` for a
/// given gate (a 1 × D row broadcast over tokens, or K × D).
pub fn decompose_with_gate(tape: &mut Tape, f_dom: Var, f_aux: Var, gate: Var) -> Result<Decomposition> {
    let proj = if tape.value(gate).rows() == 1 {
        tape.mul_row(f_dom, gate)?
    } else {
        tape.mul(f_dom, gate)?
    };
    let res = tape.sub(f_aux, proj)?;
    Ok(Decomposition { gate, proj, res })
}

pub fn decompose(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &DecomposerParams,
    f_dom: Var,
    f_aux: Var,
    mode: GateMode,
) -> Result<Decomposition> {
    let g = gate(tape, store, params, f_dom, f_aux, mode)?;
    decompose_with_gate(tape, f_dom, f_aux, g)
}

/// Mean over the given pairs and their token rows of `⟨proj_k, res_k⟩²`.
pub fn phase_loss(tape: &mut Tape, pairs: &[(Var, Var)]) -> Result<Var> {
    if pairs.is_empty() {
        return contract("phase loss needs at least one projection/residual pair");
    }
    let mut dots = Vec::with_capacity(pairs.len());
    for &(p, r) in pairs {
        dots.push(tape.row_dots(p, r)?);
    }
    let all = tape.concat_rows(&dots)?;
    let sq = tape.square(all)?;
    tape.mean_all(sq)
}

/// `proj + γ (res - Dropout(ReLU(res W_aux)))`.
#[allow(clippy::too_many_arguments)]
pub fn denoise_update<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &DecomposerParams,
    proj: Var,
    res: Var,
    gamma: f64,
    dropout: f64,
    rng: Option<&mut R>,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&gamma) {
        return contract(format!("gamma {gamma} outside [0,1]"));
    }
    let w = tape.param(store, params.denoise)?;
    let noise = tape.matmul(res, w)?;
    let noise = tape.relu(noise)?;
    let noise = tape.dropout(noise, dropout, rng)?;
    let clean = tape.sub(res, noise)?;
    let clean = tape.scale(clean, gamma)?;
    tape.add(proj, clean)
}

/// Tape handles for one decomposition, kept for diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct DecompositionTrace {
    pub step: usize,
    pub aux: Modality,
    pub f_dom: Var,
    pub f_aux: Var,
    pub decomposition: Decomposition,
}

#[derive(Clone, Debug)]
pub struct InteractionOutput {
    /// Final features indexed by [`Modality::index`].
    pub by_modality: [Var; 3],
    /// Phase loss summed over iterations and divided by `steps`.
    pub phase_loss: Var,
    pub traces: Vec<DecompositionTrace>,
}

/// Loop state between iterations.
#[derive(Clone, Debug)]
pub struct InteractionState {
    pub features: [Var; 3],
    pub step: usize,
    pub steps: usize,
    pub phase_total: Option<Var>,
}

/// Runs `steps` interaction iterations over the encoded features.
pub fn run_iterations<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &InteractionParams,
    features: [Var; 3],
    importance: &ImportanceVector,
    config: &InteractionConfig,
    mut rng: Option<&mut R>,
) -> Result<InteractionOutput> {
    config.validate()?;
    let dom = importance.dominant;
    let mut state = InteractionState {
        features,
        step: 0,
        steps: config.steps,
        phase_total: None,
    };
    let mut traces = Vec::new();

    while state.step < state.steps {
        let t = state.step;
        let f = state.features;

        let mut selfs = [f[0]; 3];
        for m in Modality::ALL {
            let i = m.index();
            selfs[i] = self_refine(
                tape,
                store,
                &params.refine[i],
                f[i],
                config.refine_dropout,
                reborrow(&mut rng),
            )?;
        }

        let lambda = lambda_schedule(t, state.steps)?;
        let mut fused = [f[0]; 3];
        for m in Modality::ALL {
            let i = m.index();
            let cross = if config.cross_path {
                let mut attended = Vec::with_capacity(2);
                for n in Modality::ALL.into_iter().filter(|&n| n != m) {
                    attended.push(cross_attend(
                        tape,
                        f[i],
                        f[n.index()],
                        importance.mu_of(m),
                        importance.mu_of(n),
                    )?);
                }
                fuse_cross(tape, attended[0], attended[1])?
            } else {
                tape.scale(f[i], 0.0)?
            };
            fused[i] = mix(tape, selfs[i], cross, lambda)?;
        }

        let mut next = fused;
        let mut pairs = Vec::with_capacity(2);
        for aux in importance.aux {
            let dp = params.decomposer_for(aux);
            let d = decompose(tape, store, dp, fused[dom.index()], fused[aux.index()], config.gate_mode)?;
            pairs.push((d.proj, d.res));
            traces.push(DecompositionTrace {
                step: t,
                aux,
                f_dom: fused[dom.index()],
                f_aux: fused[aux.index()],
                decomposition: d,
            });
            next[aux.index()] = denoise_update(
                tape,
                store,
                dp,
                d.proj,
                d.res,
                config.gamma,
                config.denoise_dropout,
                reborrow(&mut rng),
            )?;
        }
        let step_phase = phase_loss(tape, &pairs)?;
        state.phase_total = Some(match state.phase_total {
            Some(total) => tape.add(total, step_phase)?,
            None => step_phase,
        });
        state.features = next;
        state.step += 1;
    }

    let total = state.phase_total.expect("steps >= 1");
    let phase = tape.scale(total, 1.0 / state.steps as f64)?;
    Ok(InteractionOutput {
        by_modality: state.features,
        phase_loss: phase,
        traces,
    })
}
