//! Per-modality encoders.
//!
//! Each modality sequence (T × d) is projected frame-by-frame to width D
//! without bias, passed through ReLU, and mean-pooled over K contiguous
//! segments of frames. Pooling only averages live (unmasked) frames, and a
//! segment with no live frames produces a zero token. With no bias anywhere
//! in the path, an all-zero sequence stays exactly zero.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract, shape_err, PrlfError, Result};
use crate::numcore::array::{self, DenseArray};
use crate::numcore::{ParamId, ParameterStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Visual,
    Acoustic,
    Language,
}

impl Modality {
    /// Storage order used by every 3-vector in the crate: (V, A, L).
    pub const ALL: [Modality; 3] = [Modality::Visual, Modality::Acoustic, Modality::Language];

    /// Tie-break priority, highest first.
    pub const PRIORITY: [Modality; 3] = [Modality::Language, Modality::Acoustic, Modality::Visual];

    pub fn index(self) -> usize {
        match self {
            Modality::Visual => 0,
            Modality::Acoustic => 1,
            Modality::Language => 2,
        }
    }

    pub fn from_index(i: usize) -> Modality {
        Self::ALL[i]
    }

    pub fn letter(self) -> char {
        match self {
            Modality::Visual => 'v',
            Modality::Acoustic => 'a',
            Modality::Language => 'l',
        }
    }

    pub fn from_letter(c: char) -> Option<Modality> {
        match c.to_ascii_lowercase() {
            'v' => Some(Modality::Visual),
            'a' => Some(Modality::Acoustic),
            'l' => Some(Modality::Language),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter().to_ascii_uppercase())
    }
}

impl FromStr for Modality {
    type Err = PrlfError;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next().and_then(Modality::from_letter), chars.next()) {
            (Some(m), None) => Ok(m),
            _ => Err(PrlfError::Config(format!("unknown modality {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityDims {
    pub frames: usize,
    pub dim: usize,
}

/// One modality of one sample: a T × d frame matrix and its frame mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalitySequence {
    pub frames: DenseArray,
    pub mask: Vec<bool>,
}

impl ModalitySequence {
    pub fn new(frames: DenseArray, mask: Vec<bool>) -> Result<Self> {
        if frames.rows() != mask.len() {
            return shape_err(
                "ModalitySequence::new",
                format!("{} frames but {} mask bits", frames.rows(), mask.len()),
            );
        }
        if mask.is_empty() {
            return contract("a modality sequence needs at least one frame");
        }
        Ok(Self { frames, mask })
    }

    pub fn zeros(dims: ModalityDims) -> Self {
        Self {
            frames: DenseArray::zeros(dims.frames, dims.dim),
            mask: vec![false; dims.frames],
        }
    }

    pub fn dims(&self) -> ModalityDims {
        ModalityDims {
            frames: self.frames.rows(),
            dim: self.frames.cols(),
        }
    }

    /// True when at least one frame is present.
    pub fn is_live(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }

    pub fn live_frames(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Zeroes frame `t` and clears its mask bit.
    pub fn drop_frame(&mut self, t: usize) {
        self.mask[t] = false;
        self.frames.row_mut(t).iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn drop_all(&mut self) {
        for t in 0..self.mask.len() {
            self.drop_frame(t);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    pub label: usize,
    pub score: Option<f64>,
    /// Indexed by [`Modality::index`].
    pub modalities: [ModalitySequence; 3],
}

impl SampleRecord {
    pub fn modality(&self, m: Modality) -> &ModalitySequence {
        &self.modalities[m.index()]
    }

    pub fn modality_mut(&mut self, m: Modality) -> &mut ModalitySequence {
        &mut self.modalities[m.index()]
    }

    pub fn check_dims(&self, dims: &[ModalityDims; 3]) -> Result<()> {
        for m in Modality::ALL {
            let got = self.modality(m).dims();
            if got != dims[m.index()] {
                return shape_err(
                    "SampleRecord",
                    format!(
                        "sample {} modality {m}: expected {}x{}, got {}x{}",
                        self.id, dims[m.index()].frames, dims[m.index()].dim, got.frames, got.dim
                    ),
                );
            }
        }
        Ok(())
    }
}

/// K × D token matrix produced by an encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenFeature {
    pub tokens: DenseArray,
    pub modality: Modality,
    pub live: bool,
}

/// Tape handle to an encoded modality.
#[derive(Clone, Copy, Debug)]
pub struct EncodedTokens {
    pub tokens: Var,
    pub modality: Modality,
    pub live: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub tokens: usize,
    pub width: usize,
}

/// Contiguous frame ranges for each of the `k` tokens; segment `i` covers
/// frames `[i*T/k, (i+1)*T/k)`.
pub fn segments(frames: usize, k: usize) -> Vec<Range<usize>> {
    (0..k).map(|i| (i * frames / k)..((i + 1) * frames / k)).collect()
}

/// K × T matrix averaging live frames within each segment.
pub fn pooling_matrix(mask: &[bool], k: usize) -> DenseArray {
    let t = mask.len();
    let mut p = DenseArray::zeros(k, t);
    for (i, seg) in segments(t, k).into_iter().enumerate() {
        let live: Vec<usize> = seg.filter(|&f| mask[f]).collect();
        if live.is_empty() {
            continue;
        }
        let w = 1.0 / live.len() as f64;
        for f in live {
            p.set(i, f, w);
        }
    }
    p
}

/// Encodes one modality on the tape.
pub fn encode(
    tape: &mut Tape,
    store: &ParameterStore,
    projection: ParamId,
    seq: &ModalitySequence,
    modality: Modality,
    tokens: usize,
) -> Result<EncodedTokens> {
    let w = store.get(projection);
    if seq.frames.cols() != w.rows() {
        return shape_err(
            "encode",
            format!("modality {modality}: frame width {} but projection expects {}", seq.frames.cols(), w.rows()),
        );
    }
    let live = seq.is_live();
    let x = tape.constant(seq.frames.clone())?;
    let wv = tape.param(store, projection)?;
    let proj = tape.matmul(x, wv)?;
    let act = tape.relu(proj)?;
    let pool = tape.constant(pooling_matrix(&seq.mask, tokens))?;
    let out = tape.matmul(pool, act)?;
    Ok(EncodedTokens {
        tokens: out,
        modality,
        live,
    })
}

/// Value-only encoding, for inspection and tests.
pub fn encode_value(
    store: &ParameterStore,
    projection: ParamId,
    seq: &ModalitySequence,
    modality: Modality,
    tokens: usize,
) -> Result<TokenFeature> {
    let act = array::relu(&array::matmul(&seq.frames, store.get(projection))?);
    let out = array::matmul(&pooling_matrix(&seq.mask, tokens), &act)?;
    Ok(TokenFeature {
        tokens: out,
        modality,
        live: seq.is_live(),
    })
}

/// Mean over the K token rows, as a 1 × D row.
pub fn pool(tape: &mut Tape, tokens: Var) -> Result<Var> {
    tape.mean_rows(tokens)
}

pub fn pool_value(feature: &TokenFeature) -> DenseArray {
    array::mean_rows(&feature.tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(t: usize, d: usize, width: usize) -> (ParameterStore, ParamId, ModalitySequence) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::new();
        let w = store.add_glorot("enc", d, width, &mut rng).unwrap();
        let frames = DenseArray::uniform(t, d, 1.0, &mut rng);
        let seq = ModalitySequence::new(frames, vec![true; t]).unwrap();
        (store, w, seq)
    }

    #[test]
    fn zero_sequence_encodes_to_zero() {
        let (store, w, mut seq) = setup(16, 5, 6);
        seq.frames.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let f = encode_value(&store, w, &seq, Modality::Visual, 8).unwrap();
        assert!(f.tokens.data().iter().all(|&v| v == 0.0));
        assert!(f.live);
    }

    #[test]
    fn fully_masked_is_not_live_and_zero() {
        let (store, w, mut seq) = setup(16, 5, 6);
        seq.drop_all();
        let f = encode_value(&store, w, &seq, Modality::Acoustic, 8).unwrap();
        assert!(!f.live);
        assert!(f.tokens.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn each_token_pools_two_frames() {
        let segs = segments(16, 8);
        assert!(segs.iter().all(|s| s.len() == 2));
        assert_eq!(segs[3], 6..8);
    }

    #[test]
    fn masking_first_frames_only_changes_token_zero() {
        let (store, w, seq) = setup(16, 5, 6);
        let base = encode_value(&store, w, &seq, Modality::Language, 8).unwrap();
        let mut masked = seq.clone();
        masked.drop_frame(0);
        masked.drop_frame(1);
        let after = encode_value(&store, w, &masked, Modality::Language, 8).unwrap();
        assert!(after.tokens.row(0).iter().all(|&v| v == 0.0));
        for k in 1..8 {
            assert_eq!(after.tokens.row(k), base.tokens.row(k));
        }
        // Hand recomputation of token 1: mean of relu(x_2 W) and relu(x_3 W).
        let wv = store.get(w);
        for j in 0..6 {
            let unit = |t: usize| -> f64 {
                let z: f64 = (0..5).map(|i| seq.frames.get(t, i) * wv.get(i, j)).sum();
                z.max(0.0)
            };
            let expected = 0.5 * (unit(2) + unit(3));
            assert!((after.tokens.get(1, j) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn half_masked_segment_uses_live_frame_only() {
        let (store, w, mut seq) = setup(4, 3, 2);
        seq.drop_frame(1);
        let f = encode_value(&store, w, &seq, Modality::Visual, 2).unwrap();
        let act = array::relu(&array::matmul(&seq.frames, store.get(w)).unwrap());
        assert_eq!(f.tokens.row(0), act.row(0));
    }

    #[test]
    fn permuting_within_segment_is_invariant() {
        let (store, w, seq) = setup(16, 5, 6);
        let base = encode_value(&store, w, &seq, Modality::Visual, 8).unwrap();
        let mut swapped = seq.clone();
        let (r4, r5) = (seq.frames.row(4).to_vec(), seq.frames.row(5).to_vec());
        swapped.frames.row_mut(4).copy_from_slice(&r5);
        swapped.frames.row_mut(5).copy_from_slice(&r4);
        let after = encode_value(&store, w, &swapped, Modality::Visual, 8).unwrap();
        for (a, b) in base.tokens.data().iter().zip(after.tokens.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn tape_and_value_paths_agree() {
        let (store, w, seq) = setup(16, 5, 6);
        let mut tape = Tape::new();
        let enc = encode(&mut tape, &store, w, &seq, Modality::Visual, 8).unwrap();
        let val = encode_value(&store, w, &seq, Modality::Visual, 8).unwrap();
        assert_eq!(tape.value(enc.tokens), &val.tokens);
    }

    #[test]
    fn wrong_width_is_rejected() {
        let (store, w, _) = setup(16, 5, 6);
        let bad = ModalitySequence::new(DenseArray::zeros(16, 4), vec![true; 16]).unwrap();
        let mut tape = Tape::new();
        assert!(encode(&mut tape, &store, w, &bad, Modality::Visual, 8).is_err());
    }

    #[test]
    fn pool_examples() {
        let f = TokenFeature {
            tokens: DenseArray::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap(),
            modality: Modality::Visual,
            live: true,
        };
        assert_eq!(pool_value(&f).data(), &[2.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v: Vec<f64> = (0..4).map(|_| rng.gen()).collect();
        let same = TokenFeature {
            tokens: DenseArray::from_rows(&[v.clone(), v.clone(), v.clone()]).unwrap(),
            modality: Modality::Visual,
            live: true,
        };
        for (a, b) in pool_value(&same).data().iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
