//! Binary checkpoints. All integers and floats are little-endian:
//!
//! ```text
//! magic "SPATTN01" | u32 version
//! config   : str (key=value lines)
//! vocab    : u32 count, str per token
//! params   : u32 count, per tensor:
//!            str name | u8 group | u8 requires_grad | u32 ndims | u64 dims…
//!            u32 frozen count | u64 rows… | f64 values…
//! optimizer: str kind | u64 step | per tensor: u64 len, f64 m…, u64 len, f64 v…
//! trainer  : u64 seed, step, epoch, cursor | f64 best_f1, best_em | u64 best_step
//!            f64 loss_sum | u64 loss_count | u32 rows, per row u64 step + 4 × f64
//! ```
//! where `str` is a u32 byte length followed by UTF-8.

use std::fs;
use std::path::Path;

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::QaModel;
use crate::params::ParamGroup;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::optim::OptimizerState;
use super::trainer::{MetricRow, Trainer, TrainerState};

pub const MAGIC: &[u8; 8] = b"SPATTN01";
pub const FORMAT_VERSION: u32 = 1;
const WORD_EMBEDDINGS: &str = "embeddings.word";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub group: ParamGroup,
    pub requires_grad: bool,
    pub shape: Vec<usize>,
    pub frozen_rows: Vec<usize>,
    pub values: Vec<f64>,
}

/// A complete, resumable snapshot of a [`Trainer`].
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vec<String>,
    pub params: Vec<NamedTensor>,
    pub optimizer: OptimizerState,
    pub state: TrainerState,
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer) -> Self {
        let store = &trainer.model.params;
        let params = store
            .ids()
            .map(|id| {
                let t = store.get(id);
                NamedTensor {
                    name: store.name(id).to_string(),
                    group: store.group(id),
                    requires_grad: t.requires_grad(),
                    shape: t.shape().to_vec(),
                    frozen_rows: t.frozen_rows().to_vec(),
                    values: t.values().to_vec(),
                }
            })
            .collect();
        Self {
            config: trainer.config.clone(),
            vocab: trainer.model.vocab.tokens().to_vec(),
            params,
            optimizer: trainer.optimizer.clone(),
            state: trainer.state.clone(),
        }
    }

    /// Rebuilds the trainer, checking that the stored parameters match the
    /// architecture the stored config describes.
    pub fn restore(self) -> Result<Trainer> {
        let emb = self
            .params
            .iter()
            .find(|p| p.name == WORD_EMBEDDINGS)
            .ok_or_else(|| Error::Incompatible(format!("checkpoint has no {WORD_EMBEDDINGS} tensor")))?;
        let emb_tensor = Tensor::new(emb.shape.clone(), emb.values.clone())?;
        let vocab = Vocab::from_parts(self.vocab, emb_tensor).map_err(|e| Error::Incompatible(e.to_string()))?;
        let mut rng = SeededRng::new(0);
        let mut model = QaModel::new(self.config.model_config(), vocab, &mut rng).map_err(|e| Error::Incompatible(e.to_string()))?;
        if model.params.len() != self.params.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint holds {} tensors, the configured model has {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for (id, stored) in model.params.ids().collect::<Vec<_>>().into_iter().zip(self.params) {
            let name = model.params.name(id).to_string();
            let current = model.params.get(id);
            if stored.name != name || stored.shape != current.shape() || stored.group != model.params.group(id) {
                return Err(Error::Incompatible(format!(
                    "tensor {} {:?} does not match model tensor {name} {:?}",
                    stored.name,
                    stored.shape,
                    current.shape()
                )));
            }
            let mut t = Tensor::new(stored.shape, stored.values)?.with_frozen_rows(stored.frozen_rows);
            t.set_requires_grad(stored.requires_grad);
            *model.params.get_mut(id) = t;
        }
        let trainer = Trainer::from_parts(self.config, model, self.optimizer, self.state);
        let fresh = OptimizerState::new(trainer.optimizer.kind, &trainer.model.params);
        let shapes_ok = fresh.m.iter().zip(&trainer.optimizer.m).all(|(a, b)| a.len() == b.len())
            && fresh.v.iter().zip(&trainer.optimizer.v).all(|(a, b)| a.len() == b.len())
            && fresh.m.len() == trainer.optimizer.m.len()
            && fresh.v.len() == trainer.optimizer.v.len();
        if !shapes_ok {
            return Err(Error::Incompatible("optimizer moments do not match the parameters".into()));
        }
        Ok(trainer)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.str(&self.config.to_text());
        w.u32(self.vocab.len() as u32);
        for t in &self.vocab {
            w.str(t);
        }
        w.u32(self.params.len() as u32);
        for p in &self.params {
            w.str(&p.name);
            w.u8(group_code(p.group));
            w.u8(p.requires_grad as u8);
            w.u32(p.shape.len() as u32);
            p.shape.iter().for_each(|&d| w.u64(d as u64));
            w.u32(p.frozen_rows.len() as u32);
            p.frozen_rows.iter().for_each(|&r| w.u64(r as u64));
            p.values.iter().for_each(|&v| w.f64(v));
        }
        w.str(&self.optimizer.kind.to_string());
        w.u64(self.optimizer.step);
        for (m, v) in self.optimizer.m.iter().zip(&self.optimizer.v) {
            w.f64s(m);
            w.f64s(v);
        }
        let s = &self.state;
        for x in [s.seed, s.step, s.epoch, s.cursor] {
            w.u64(x);
        }
        w.f64(s.best_f1);
        w.f64(s.best_em);
        w.u64(s.best_step);
        w.f64(s.loss_sum);
        w.u64(s.loss_count);
        w.u32(s.log.len() as u32);
        for r in &s.log {
            w.u64(r.step);
            for x in [r.train_loss, r.dev_loss, r.dev_f1, r.dev_em] {
                w.f64(x);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Corrupt {
                offset: 0,
                message: "bad magic bytes, not a checkpoint".into(),
            });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let config_at = r.pos;
        let config = TrainConfig::parse_text(&r.str()?).map_err(|e| Error::Corrupt {
            offset: config_at,
            message: format!("config section: {e}"),
        })?;
        let vocab = (0..r.u32()?).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let count = r.u32()?;
        let mut params = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = r.str()?;
            let at = r.pos;
            let group = decode_group(r.u8()?).ok_or_else(|| r.corrupt_at(at, "unknown parameter group"))?;
            let requires_grad = r.u8()? != 0;
            let ndims = r.u32()?;
            let shape = (0..ndims).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let frozen = r.u32()?;
            let frozen_rows = (0..frozen).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| r.corrupt("tensor size overflows"))?;
            let values = r.f64_array(len)?;
            params.push(NamedTensor {
                name,
                group,
                requires_grad,
                shape,
                frozen_rows,
                values,
            });
        }
        let at = r.pos;
        let kind = r.str()?.parse().map_err(|_| r.corrupt_at(at, "unknown optimizer kind"))?;
        let step = r.u64()?;
        let (mut m, mut v) = (Vec::with_capacity(params.len()), Vec::with_capacity(params.len()));
        for _ in 0..params.len() {
            let len = r.usize()?;
            m.push(r.f64_array(len)?);
            let len = r.usize()?;
            v.push(r.f64_array(len)?);
        }
        let optimizer = OptimizerState { kind, step, m, v };
        let seed = r.u64()?;
        let (step, epoch, cursor) = (r.u64()?, r.u64()?, r.u64()?);
        let (best_f1, best_em, best_step) = (r.f64()?, r.f64()?, r.u64()?);
        let (loss_sum, loss_count) = (r.f64()?, r.u64()?);
        let rows = r.u32()?;
        let mut log = Vec::with_capacity(rows as usize);
        for _ in 0..rows {
            log.push(MetricRow {
                step: r.u64()?,
                train_loss: r.f64()?,
                dev_loss: r.f64()?,
                dev_f1: r.f64()?,
                dev_em: r.f64()?,
            });
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt("trailing bytes after trainer state"));
        }
        Ok(Self {
            config,
            vocab,
            params,
            optimizer,
            state: TrainerState {
                seed,
                step,
                epoch,
                cursor,
                best_f1,
                best_em,
                best_step,
                loss_sum,
                loss_count,
                log,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn group_code(g: ParamGroup) -> u8 {
    ParamGroup::ALL.iter().position(|&x| x == g).expect("group is listed") as u8
}

fn decode_group(code: u8) -> Option<ParamGroup> {
    ParamGroup::ALL.get(code as usize).copied()
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }

    fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    fn f64s(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        xs.iter().for_each(|&x| self.f64(x));
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, message: &str) -> Error {
        self.corrupt_at(self.pos, message)
    }

    fn corrupt_at(&self, offset: usize, message: &str) -> Error {
        Error::Corrupt {
            offset,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            self.corrupt(&format!(
                "truncated: needed {n} more bytes, {} available",
                self.bytes.len() - self.pos
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
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

    fn usize(&mut self) -> Result<usize> {
        let at = self.pos;
        usize::try_from(self.u64()?).map_err(|_| self.corrupt_at(at, "size does not fit in memory"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64_array(&mut self, len: usize) -> Result<Vec<f64>> {
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| self.corrupt("array length overflows"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.corrupt_at(at, "string is not UTF-8"))
    }
}
