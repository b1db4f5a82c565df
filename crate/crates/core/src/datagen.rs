//! Synthetic datasets with a known informative modality and key frames,
//! the two missingness protocols, and the line-delimited dataset format.
//!
//! A generated sample carries the class signal in exactly one modality: a
//! class prototype direction scaled to `amplitude · σ` is added to a few
//! key frames of that modality. Everything else is isotropic Gaussian noise.
//! Which modality and which frames were used is returned separately as
//! [`GroundTruth`], which never travels inside a [`SampleRecord`].

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoders::{Modality, ModalityDims, ModalitySequence, SampleRecord};
use crate::error::{contract, PrlfError, Result};
use crate::numcore::array::DenseArray;
use crate::seed::{self, stream};

pub const FORMAT_NAME: &str = "prlf-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Sample ids of different splits never collide.
    pub fn id_base(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1 << 40,
            Split::Test => 2 << 40,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub samples: usize,
    pub classes: usize,
    /// (V, A, L) order.
    pub dims: [ModalityDims; 3],
    pub noise: f64,
    /// Prototype amplitude in units of `noise`.
    pub amplitude: f64,
    /// Probability of each modality being the informative one, (V, A, L).
    pub informative: [f64; 3],
    pub key_frames: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            classes: 2,
            dims: [
                ModalityDims { frames: 16, dim: 20 },
                ModalityDims { frames: 16, dim: 20 },
                ModalityDims { frames: 16, dim: 32 },
            ],
            noise: 1.0,
            amplitude: 3.0,
            informative: [0.25, 0.25, 0.5],
            key_frames: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PrlfError::Config(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be positive, got {}", self.noise));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return bad(format!("amplitude must be non-negative, got {}", self.amplitude));
        }
        let total: f64 = self.informative.iter().sum();
        if self.informative.iter().any(|&p| p < 0.0 || !p.is_finite()) || total <= 0.0 {
            return bad("informative weights must be non-negative and not all zero".into());
        }
        for (m, d) in Modality::ALL.iter().zip(&self.dims) {
            if d.frames == 0 || d.dim == 0 {
                return bad(format!("modality {m} has an empty shape"));
            }
            if self.key_frames > d.frames {
                return bad(format!("{} key frames exceed {} frames of {m}", self.key_frames, d.frames));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Synthetic { config: SynthConfig },
    File { path: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SampleRecord>,
    pub split: Split,
    pub classes: usize,
    pub dims: [ModalityDims; 3],
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Generation metadata for one sample, kept apart from the model's inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub sample_id: u64,
    pub informative: Modality,
    pub key_frames: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    pub truth: Vec<GroundTruth>,
}

/// Unit prototype direction for `class` in modality `m`.
pub fn prototype(seed: u64, class: usize, m: Modality, dim: usize) -> Vec<f64> {
    let mut rng = seed::rng_for(&[seed, stream::PROTOTYPE, class as u64, m.index() as u64]);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn pick_weighted<R: Rng + ?Sized>(weights: [f64; 3], rng: &mut R) -> Modality {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for m in Modality::ALL {
        let w = weights[m.index()];
        if u < w {
            return m;
        }
        u -= w;
    }
    // Rounding can leave u just above the last weight.
    *Modality::ALL.iter().rev().find(|m| weights[m.index()] > 0.0).expect("positive weight")
}

/// Builds one sample of `split` from its own seeded stream.
pub fn generate_sample(config: &SynthConfig, split: Split, index: usize) -> (SampleRecord, GroundTruth) {
    let id = split.id_base() + index as u64;
    let mut rng = seed::rng_for(&[config.seed, stream::SAMPLE, id]);
    let label = rng.gen_range(0..config.classes);
    let informative = pick_weighted(config.informative, &mut rng);
    let mut key_frames = Vec::new();

    let modalities = Modality::ALL.map(|m| {
        let d = config.dims[m.index()];
        let mut frames = DenseArray::zeros(d.frames, d.dim);
        for v in frames.data_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = config.noise * z;
        }
        if m == informative {
            let mut keys = sample_indices(&mut rng, d.frames, config.key_frames).into_vec();
            keys.sort_unstable();
            let proto = prototype(config.seed, label, m, d.dim);
            let amp = config.amplitude * config.noise;
            for &t in &keys {
                for (x, p) in frames.row_mut(t).iter_mut().zip(&proto) {
                    *x += amp * p;
                }
            }
            key_frames = keys;
        }
        ModalitySequence {
            frames,
            mask: vec![true; d.frames],
        }
    });

    let sample = SampleRecord {
        id,
        label,
        score: Some(label as f64),
        modalities,
    };
    let truth = GroundTruth {
        sample_id: id,
        informative,
        key_frames,
    };
    (sample, truth)
}

pub fn generate(config: &SynthConfig, split: Split) -> Result<Generated> {
    config.validate()?;
    let (samples, truth) = (0..config.samples).map(|i| generate_sample(config, split, i)).unzip();
    Ok(Generated {
        dataset: Dataset {
            samples,
            split,
            classes: config.classes,
            dims: config.dims,
            provenance: Provenance::Synthetic { config: config.clone() },
        },
        truth,
    })
}

/// Drops every frame of every modality independently with probability `p`.
pub fn apply_intra_mask<R: Rng + ?Sized>(sample: &mut SampleRecord, p: f64, rng: &mut R) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return contract(format!("missing rate {p} outside [0,1]"));
    }
    for seq in sample.modalities.iter_mut() {
        for t in 0..seq.mask.len() {
            // Draw for every frame so the stream does not depend on p.
            let u: f64 = rng.gen();
            if u < p {
                seq.drop_frame(t);
            }
        }
    }
    Ok(())
}

/// Per-sample mask stream for a condition keyed by `tag` (epoch or seed).
pub fn mask_rng(master: u64, kind: u64, tag: u64, sample_id: u64) -> rand_chacha::ChaCha8Rng {
    seed::rng_for(&[master, kind, tag, sample_id])
}

/// A non-empty set of available modalities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModalitySubset {
    present: [bool; 3],
}

impl ModalitySubset {
    pub const FULL: ModalitySubset = ModalitySubset { present: [true; 3] };

    pub fn new(present: [bool; 3]) -> Result<Self> {
        if !present.iter().any(|&p| p) {
            return contract("an available-modality subset must not be empty");
        }
        Ok(Self { present })
    }

    pub fn of(mods: &[Modality]) -> Result<Self> {
        let mut present = [false; 3];
        for m in mods {
            present[m.index()] = true;
        }
        Self::new(present)
    }

    pub fn contains(&self, m: Modality) -> bool {
        self.present[m.index()]
    }

    pub fn is_full(&self) -> bool {
        self.present == [true; 3]
    }

    /// The seven evaluation conditions, in table order:
    /// {l}, {a}, {v}, {l,a}, {l,v}, {a,v}, {l,a,v}.
    pub fn table_order() -> [ModalitySubset; 7] {
        ["l", "a", "v", "la", "lv", "av", "lav"].map(|s| s.parse().expect("valid subset"))
    }
}

impl fmt::Display for ModalitySubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in Modality::PRIORITY {
            if self.contains(m) {
                write!(f, "{}", m.letter())?;
            }
        }
        Ok(())
    }
}

impl FromStr for ModalitySubset {
    type Err = PrlfError;

    fn from_str(s: &str) -> Result<Self> {
        let mut present = [false; 3];
        for c in s.trim().chars().filter(|c| !matches!(c, ',' | '{' | '}' | ' ')) {
            let m = Modality::from_letter(c.to_ascii_lowercase())
                .ok_or_else(|| PrlfError::Config(format!("unknown modality letter '{c}' in subset \"{s}\"")))?;
            present[m.index()] = true;
        }
        Self::new(present)
    }
}

impl TryFrom<String> for ModalitySubset {
    type Error = PrlfError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModalitySubset> for String {
    fn from(s: ModalitySubset) -> String {
        s.to_string()
    }
}

/// Zeroes every modality outside `subset`.
pub fn apply_inter_mask(sample: &mut SampleRecord, subset: ModalitySubset) {
    for m in Modality::ALL {
        if !subset.contains(m) {
            sample.modality_mut(m).drop_all();
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    classes: usize,
    dims: [ModalityDims; 3],
    split: Split,
    samples: usize,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceLine {
    frames: Vec<Vec<f64>>,
    mask: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    id: u64,
    label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    v: SequenceLine,
    a: SequenceLine,
    l: SequenceLine,
}

impl SequenceLine {
    fn from_seq(seq: &ModalitySequence) -> Self {
        Self {
            frames: (0..seq.frames.rows()).map(|t| seq.frames.row(t).to_vec()).collect(),
            mask: seq.mask.iter().map(|&b| b as u8).collect(),
        }
    }

    fn into_seq(self, m: Modality, dims: ModalityDims, line: usize) -> Result<ModalitySequence> {
        let err = |message: String| PrlfError::Parse { line, message };
        if self.frames.len() != dims.frames || self.mask.len() != dims.frames {
            return Err(err(format!(
                "modality {m}: expected {} frames and mask bits, got {} and {}",
                dims.frames,
                self.frames.len(),
                self.mask.len()
            )));
        }
        let mut data = Vec::with_capacity(dims.frames * dims.dim);
        let mut mask = Vec::with_capacity(dims.frames);
        for (t, (row, bit)) in self.frames.iter().zip(&self.mask).enumerate() {
            if row.len() != dims.dim {
                return Err(err(format!("modality {m} frame {t}: expected width {}, got {}", dims.dim, row.len())));
            }
            let zero = row.iter().all(|&v| v == 0.0);
            match bit {
                0 if !zero => return Err(err(format!("modality {m} frame {t}: masked frame is not zero"))),
                1 if zero => return Err(err(format!("modality {m} frame {t}: mask bit set over a zero frame"))),
                0 | 1 => {}
                b => return Err(err(format!("modality {m} frame {t}: mask bit {b} is not 0 or 1"))),
            }
            data.extend_from_slice(row);
            mask.push(*bit == 1);
        }
        let frames = DenseArray::new(vec![dims.frames, dims.dim], data)
            .map_err(|e| err(e.to_string()))?;
        ModalitySequence::new(frames, mask).map_err(|e| err(e.to_string()))
    }
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        classes: dataset.classes,
        dims: dataset.dims,
        split: dataset.split,
        samples: dataset.samples.len(),
        provenance: dataset.provenance.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for s in &dataset.samples {
        let line = SampleLine {
            id: s.id,
            label: s.label,
            score: s.score,
            v: SequenceLine::from_seq(s.modality(Modality::Visual)),
            a: SequenceLine::from_seq(s.modality(Modality::Acoustic)),
            l: SequenceLine::from_seq(s.modality(Modality::Language)),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, message: String| PrlfError::Parse { line, message };

    let header: Header = match lines.next() {
        Some((_, text)) => serde_json::from_str(&text?).map_err(|e| parse_err(1, format!("bad header: {e}")))?,
        None => return Err(parse_err(1, "empty file, expected a header".into())),
    };
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported format {} version {}", header.format, header.version),
        ));
    }
    if header.classes < 2 {
        return Err(parse_err(1, format!("header declares {} classes", header.classes)));
    }

    let mut samples = Vec::with_capacity(header.samples);
    let mut seen = std::collections::BTreeSet::new();
    let mut last_line = 1;
    for (i, text) in lines {
        let line = i + 1;
        last_line = line;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: SampleLine = serde_json::from_str(&text).map_err(|e| parse_err(line, e.to_string()))?;
        if rec.label >= header.classes {
            return Err(parse_err(
                line,
                format!("label {} outside the header's {} classes", rec.label, header.classes),
            ));
        }
        if !seen.insert(rec.id) {
            return Err(parse_err(line, format!("duplicate sample id {}", rec.id)));
        }
        if rec.score.is_some_and(|s| !s.is_finite()) {
            return Err(parse_err(line, "non-finite score".into()));
        }
        let [dv, da, dl] = header.dims;
        let modalities = [
            rec.v.into_seq(Modality::Visual, dv, line)?,
            rec.a.into_seq(Modality::Acoustic, da, line)?,
            rec.l.into_seq(Modality::Language, dl, line)?,
        ];
        samples.push(SampleRecord {
            id: rec.id,
            label: rec.label,
            score: rec.score,
            modalities,
        });
    }
    if samples.len() != header.samples {
        return Err(parse_err(
            last_line + 1,
            format!("header declares {} samples but the file holds {}", header.samples, samples.len()),
        ));
    }
    Ok(Dataset {
        samples,
        split: header.split,
        classes: header.classes,
        dims: header.dims,
        provenance: header.provenance,
    })
}

pub fn save_truth(truth: &[GroundTruth], path: &Path) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(w, truth)?;
    Ok(())
}

pub fn load_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
