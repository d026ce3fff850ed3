//! Checkpoint files.
//!
//! Layout, little-endian: magic `PGXC`, version u16, config text (u32
//! length + UTF-8 `key = value` lines), completed epochs u32, parameter
//! count u32 and that many named tensor blocks, then the optimizer
//! (β₁, β₂, ε as f64, step u64, first-moment blocks, second-moment blocks)
//! and the shuffling RNG (32-byte seed, stream u64, word position u128).
//!
//! A named tensor block is a u16 name length, the UTF-8 name, a u8 rank,
//! u32 dims and the f64 payload.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::models::{GenomicCox, MeanMil, SurvivalModel};
use super::trainer::Trainer;
use super::{Method, TrainConfig};
use crate::config::KeyValues;
use crate::data::PatientRecord;
use crate::error::{Error, Result};
use crate::model::PathoGenX;
use crate::nn::ParamTree;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PGXC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    fn restore(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub params: Vec<(String, Tensor)>,
    pub adam: AdamState,
    pub rng: RngState,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u16).to_le_bytes());
    out.extend(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend((d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.fail(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn text(&mut self, len: usize) -> Result<String> {
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.fail("name is not UTF-8"))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u16()? as usize;
        let name = self.text(len)?;
        let rank = self.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = shape.iter().product::<usize>();
        let data = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| self.fail(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }

    fn tensors(&mut self, count: usize) -> Result<Vec<(String, Tensor)>> {
        (0..count).map(|_| self.tensor()).collect()
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        let text = self.config.to_text();
        out.extend((text.len() as u32).to_le_bytes());
        out.extend(text.as_bytes());
        out.extend((self.epoch as u32).to_le_bytes());
        out.extend((self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            put_tensor(&mut out, name, t);
        }
        let a = &self.adam;
        for v in [a.beta1, a.beta2, a.eps] {
            out.extend(v.to_le_bytes());
        }
        out.extend(a.step.to_le_bytes());
        for (kind, moments) in [("m", &a.first), ("v", &a.second)] {
            for ((name, _), t) in self.params.iter().zip(moments) {
                put_tensor(&mut out, &format!("adam.{kind}.{name}"), t);
            }
        }
        out.extend(self.rng.seed);
        out.extend(self.rng.stream.to_le_bytes());
        out.extend(self.rng.word_pos.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(4).ok() != Some(&CHECKPOINT_MAGIC[..]) {
            return Err(r.fail("bad magic, expected PGXC"));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let text = r.text(len)?;
        let mut config = TrainConfig::default();
        config.apply_text(&text, path)?;
        let epoch = r.u32()? as usize;
        let count = r.u32()? as usize;
        let params = r.tensors(count)?;
        let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
        let step = r.u64()?;
        let mut moments = Vec::new();
        for kind in ["m", "v"] {
            let block = r.tensors(count)?;
            for ((name, t), (pname, p)) in block.iter().zip(&params) {
                if *name != format!("adam.{kind}.{pname}") || t.shape() != p.shape() {
                    return Err(r.fail(format!("optimizer entry {name} does not match {pname}")));
                }
            }
            moments.push(block.into_iter().map(|(_, t)| t).collect::<Vec<_>>());
        }
        let second = moments.pop().expect("two blocks");
        let first = moments.pop().expect("two blocks");
        let rng = RngState {
            seed: r.array()?,
            stream: r.u64()?,
            word_pos: u128::from_le_bytes(r.array()?),
        };
        if r.pos != bytes.len() {
            return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            epoch,
            params,
            adam: AdamState {
                beta1,
                beta2,
                eps,
                step,
                first,
                second,
            },
            rng,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes, path)
}

/// Copies `named` into `target`, requiring the same names in the same order
/// with the same shapes.
pub fn assign_named<P: ParamTree<Elem = Tensor>>(
    target: &mut P,
    named: &[(String, Tensor)],
) -> Result<()> {
    let mut slots = Vec::new();
    target.visit_mut("", &mut |name, t| slots.push((name, t)));
    if slots.len() != named.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model expects {}",
            named.len(),
            slots.len()
        )));
    }
    for ((want, slot), (name, t)) in slots.into_iter().zip(named) {
        if want != *name {
            return Err(Error::Checkpoint(format!(
                "checkpoint tensor {name} where model expects {want}"
            )));
        }
        if slot.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: checkpoint shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    Ok(())
}

impl<M: SurvivalModel> Trainer<M> {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            params: self
                .model
                .named()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
            adam: self.adam.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    /// Rebuilds the trainer a checkpoint was taken from.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.config.method != M::METHOD {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {} model, expected {}",
                ckpt.config.method,
                M::METHOD
            )));
        }
        ckpt.config.validate()?;
        let mut model = M::init(&mut ChaCha8Rng::seed_from_u64(0), &ckpt.config.model)?;
        assign_named(&mut model, &ckpt.params)?;
        Ok(Self {
            config: ckpt.config.clone(),
            model,
            adam: ckpt.adam.clone(),
            epoch: ckpt.epoch,
            rng: ckpt.rng.restore(),
        })
    }
}

/// Risks from whichever model the checkpoint holds.
pub fn predict_checkpoint(ckpt: &Checkpoint, records: &[PatientRecord]) -> Result<Vec<f64>> {
    fn run<M: SurvivalModel>(ckpt: &Checkpoint, records: &[PatientRecord]) -> Result<Vec<f64>> {
        Trainer::<M>::from_checkpoint(ckpt)?.model.predict(records)
    }
    match ckpt.config.method {
        Method::PathoGenX => run::<PathoGenX>(ckpt, records),
        Method::MeanMil => run::<MeanMil>(ckpt, records),
        Method::GenomicCox => run::<GenomicCox>(ckpt, records),
    }
}
