//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "PRLFCKPT"
//! version  u32
//! count    u32      number of sections
//! section* tag [u8; 4], length u64, payload
//! ```
//!
//! Sections:
//!
//! - `CONF`: UTF-8 JSON `{"model": ModelConfig, "train": TrainConfig}`
//! - `PARM`: u32 count, then per parameter: u32 name length, name bytes,
//!   u32 rank, rank × u64 dims, then the f64 entries in row-major order
//! - `FISH`: u64 count, then per record: u64 sample id, u64 epoch,
//!   u8 has-previous, 3 × f64 current, 3 × f64 previous (zero when absent)
//! - `INFW`: 3 × f64 frozen inference blend weight (V, A, L)
//! - `META`: u64 completed epochs, u64 rng digest
//!
//! Unknown section tags are skipped on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Predictor, TrainConfig};
use crate::amre::{FisherRecord, FisherStore};
use crate::error::{PrlfError, Result};
use crate::model::{Model, ModelConfig};
use crate::numcore::{DenseArray, ParameterStore};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PRLFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub store: ParameterStore,
    pub fisher: FisherStore,
    pub inference_w: [f64; 3],
    pub epoch: u64,
    pub rng_digest: u64,
}

#[derive(Serialize, Deserialize)]
struct ConfigSection {
    model: ModelConfig,
    train: TrainConfig,
}

fn bad(msg: impl Into<String>) -> PrlfError {
    PrlfError::Checkpoint(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64x3(&mut self) -> Result<[f64; 3]> {
        Ok([self.f64()?, self.f64()?, self.f64()?])
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn section(out: &mut Writer, tag: &[u8; 4], payload: Vec<u8>) {
    out.bytes(tag);
    out.u64(payload.len() as u64);
    out.bytes(&payload);
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Writer(Vec::new());
        out.bytes(CHECKPOINT_MAGIC);
        out.u32(CHECKPOINT_VERSION);
        out.u32(5);

        let conf = serde_json::to_vec(&ConfigSection {
            model: self.model_config.clone(),
            train: self.train_config.clone(),
        })?;
        section(&mut out, b"CONF", conf);

        let mut p = Writer(Vec::new());
        p.u32(self.store.len() as u32);
        for (_, name, value) in self.store.iter() {
            p.u32(name.len() as u32);
            p.bytes(name.as_bytes());
            p.u32(value.shape().len() as u32);
            for &d in value.shape() {
                p.u64(d as u64);
            }
            for &v in value.data() {
                p.f64(v);
            }
        }
        section(&mut out, b"PARM", p.0);

        let mut f = Writer(Vec::new());
        f.u64(self.fisher.len() as u64);
        for r in self.fisher.iter() {
            f.u64(r.sample_id);
            f.u64(r.epoch as u64);
            f.u8(r.previous.is_some() as u8);
            for v in r.current {
                f.f64(v);
            }
            for v in r.previous.unwrap_or([0.0; 3]) {
                f.f64(v);
            }
        }
        section(&mut out, b"FISH", f.0);

        let mut w = Writer(Vec::new());
        for v in self.inference_w {
            w.f64(v);
        }
        section(&mut out, b"INFW", w.0);

        let mut m = Writer(Vec::new());
        m.u64(self.epoch);
        m.u64(self.rng_digest);
        section(&mut out, b"META", m.0);
        Ok(out.0)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()?;
        let mut conf = None;
        let mut store = None;
        let mut fisher = None;
        let mut infw = None;
        let mut meta = None;
        for _ in 0..count {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = usize::try_from(r.u64()?).map_err(|_| bad("section too large"))?;
            let mut s = Reader {
                buf: r.take(len)?,
                pos: 0,
            };
            match &tag {
                b"CONF" => {
                    let c: ConfigSection = serde_json::from_slice(s.buf)
                        .map_err(|e| bad(format!("bad config section: {e}")))?;
                    s.pos = s.buf.len();
                    conf = Some(c);
                }
                b"PARM" => store = Some(read_params(&mut s)?),
                b"FISH" => fisher = Some(read_fisher(&mut s)?),
                b"INFW" => infw = Some(s.f64x3()?),
                b"META" => meta = Some((s.u64()?, s.u64()?)),
                _ => s.pos = s.buf.len(),
            }
            if !s.done() {
                return Err(bad(format!(
                    "section {} has trailing bytes",
                    String::from_utf8_lossy(&tag)
                )));
            }
        }
        if !r.done() {
            return Err(bad("trailing bytes after the last section"));
        }
        let missing = |n: &str| bad(format!("missing {n} section"));
        let conf = conf.ok_or_else(|| missing("CONF"))?;
        let (epoch, rng_digest) = meta.ok_or_else(|| missing("META"))?;
        Ok(Self {
            model_config: conf.model,
            train_config: conf.train,
            store: store.ok_or_else(|| missing("PARM"))?,
            fisher: fisher.ok_or_else(|| missing("FISH"))?,
            inference_w: infw.ok_or_else(|| missing("INFW"))?,
            epoch,
            rng_digest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Rebuilds the model and checks its layout against the stored values.
    pub fn model(&self) -> Result<Model> {
        Model::from_store(self.model_config.clone(), self.store.clone())
    }

    pub fn predictor(&self) -> Result<Predictor> {
        Ok(Predictor {
            model: self.model()?,
            w: self.inference_w,
        })
    }
}

fn read_params(r: &mut Reader<'_>) -> Result<ParameterStore> {
    let n = r.u32()?;
    let mut store = ParameterStore::new();
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| bad("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| bad("dimension too large"))?);
        }
        let total = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad(format!("parameter {name} is too large")))?;
        if total > r.buf.len() / 8 {
            return Err(bad(format!("parameter {name} is truncated")));
        }
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            data.push(r.f64()?);
        }
        let value = DenseArray::new(shape, data).map_err(|e| bad(format!("parameter {name}: {e}")))?;
        store.add(name, value).map_err(|e| bad(e.to_string()))?;
    }
    Ok(store)
}

fn read_fisher(r: &mut Reader<'_>) -> Result<FisherStore> {
    let n = r.u64()?;
    let mut store = FisherStore::new();
    for _ in 0..n {
        let sample_id = r.u64()?;
        let epoch = r.u64()? as usize;
        let has_prev = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(bad(format!("bad previous-trace flag {b}"))),
        };
        let current = r.f64x3()?;
        let previous = r.f64x3()?;
        store.insert(FisherRecord {
            sample_id,
            epoch,
            current,
            previous: has_prev.then_some(previous),
        });
    }
    Ok(store)
}
