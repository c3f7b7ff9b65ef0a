//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `FTLK`, `version: u32`, then sections:
//! run config (length-prefixed UTF-8 JSON), model tensors, model optimizer
//! state, optional critic tensors and optimizer state, RNG state, codebook,
//! motion decoder digest. Tensor tables are `count: u32` followed by
//! `(name, tensor)` pairs; strings are `len: u32` + bytes.

use std::io::{Cursor, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gesture::{BodyPart, Codebook, MotionDecoder};
use crate::model::FastTalker;
use crate::numerics::optim::{Adam, AdamConfig};
use crate::numerics::serialize::{read_tensor, write_tensor};
use crate::numerics::{ParamStore, Tensor};
use crate::speech::Discriminator;
use crate::train::{Critic, Trainer};
use crate::rng;

pub const MAGIC: &[u8; 4] = b"FTLK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl From<&Adam> for OptimizerState {
    fn from(a: &Adam) -> Self {
        Self {
            config: a.config,
            step: a.step,
            first: a.first.clone(),
            second: a.second.clone(),
        }
    }
}

impl OptimizerState {
    fn into_adam(self, store: &ParamStore) -> Result<Adam> {
        let mut adam = Adam::new(self.config, store);
        if self.first.len() != adam.first.len() || self.second.len() != adam.second.len() {
            return Err(Error::Checkpoint("optimizer state does not match the parameter table".into()));
        }
        for (slot, t) in adam.first.iter_mut().chain(adam.second.iter_mut()).zip(self.first.iter().chain(&self.second)) {
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint("optimizer moment shape mismatch".into()));
            }
        }
        adam.step = self.step;
        adam.first = self.first;
        adam.second = self.second;
        Ok(adam)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    pub params: Vec<(String, Tensor)>,
    pub optimizer: OptimizerState,
}

/// Everything needed to resume deterministic training: all random streams
/// derive from the master seed and the optimizer step count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: OptimizerState,
    pub critic: Option<CriticState>,
    pub rng: RngState,
    pub codebook: Tensor,
    pub codebook_part: BodyPart,
    pub motion_digest: String,
}

fn w_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn w_table(w: &mut impl Write, table: &[(String, Tensor)]) -> std::io::Result<()> {
    w_u32(w, table.len() as u32)?;
    for (name, t) in table {
        w_str(w, name)?;
        write_tensor(w, t)?;
    }
    Ok(())
}

fn w_tensors(w: &mut impl Write, ts: &[Tensor]) -> std::io::Result<()> {
    w_u32(w, ts.len() as u32)?;
    ts.iter().try_for_each(|t| write_tensor(w, t))
}

fn w_optimizer(w: &mut impl Write, o: &OptimizerState) -> std::io::Result<()> {
    for v in [o.config.lr, o.config.beta1, o.config.beta2, o.config.eps] {
        w.write_all(&v.to_le_bytes())?;
    }
    w_u64(w, o.step)?;
    w_tensors(w, &o.first)?;
    w_tensors(w, &o.second)
}

fn truncated(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated file: {e}"))
}

fn r_bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b)
}

fn r_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(r_bytes(r)?))
}

fn r_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(r_bytes(r)?))
}

fn r_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(r_bytes(r)?))
}

fn r_str(r: &mut impl Read) -> Result<String> {
    let n = r_u32(r)? as usize;
    let mut b = Vec::new();
    r.take(n as u64).read_to_end(&mut b).map_err(truncated)?;
    if b.len() != n {
        return Err(Error::Checkpoint("truncated string".into()));
    }
    String::from_utf8(b).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
}

fn r_table(r: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    let n = r_u32(r)?;
    (0..n).map(|_| Ok((r_str(r)?, read_tensor(r)?))).collect()
}

fn r_tensors(r: &mut impl Read) -> Result<Vec<Tensor>> {
    let n = r_u32(r)?;
    (0..n).map(|_| read_tensor(r)).collect()
}

fn r_optimizer(r: &mut impl Read) -> Result<OptimizerState> {
    let config = AdamConfig {
        lr: r_f64(r)?,
        beta1: r_f64(r)?,
        beta2: r_f64(r)?,
        eps: r_f64(r)?,
    };
    Ok(OptimizerState {
        config,
        step: r_u64(r)?,
        first: r_tensors(r)?,
        second: r_tensors(r)?,
    })
}

impl Checkpoint {
    /// Snapshot of a trainer; `config` is stored as given.
    pub fn capture(trainer: &Trainer, config: &RunConfig) -> Self {
        let model = &trainer.model;
        Self {
            config: config.clone(),
            params: model.store.named(),
            optimizer: OptimizerState::from(&trainer.adam),
            critic: trainer.critic.as_ref().map(|c| CriticState {
                params: c.store.named(),
                optimizer: OptimizerState::from(&c.adam),
            }),
            rng: RngState {
                seed: trainer.seed,
                step: trainer.step,
            },
            codebook: model.codebook.table().clone(),
            codebook_part: model.codebook.part,
            motion_digest: model.motion.digest(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        self.write(&mut w).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(w)
    }

    fn write(&self, w: &mut Vec<u8>) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w_u32(w, VERSION)?;
        w_str(w, &serde_json::to_string(&self.config)?)?;
        w_table(w, &self.params)?;
        w_optimizer(w, &self.optimizer)?;
        match &self.critic {
            None => w.write_all(&[0])?,
            Some(c) => {
                w.write_all(&[1])?;
                w_table(w, &c.params)?;
                w_optimizer(w, &c.optimizer)?;
            }
        }
        w_u64(w, self.rng.seed)?;
        w_u64(w, self.rng.step)?;
        w_str(w, &serde_json::to_string(&self.codebook_part)?)?;
        write_tensor(w, &self.codebook)?;
        w_str(w, &self.motion_digest)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let magic: [u8; 4] = r_bytes(&mut r)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (this build reads version {VERSION})"
            )));
        }
        let config: RunConfig = serde_json::from_str(&r_str(&mut r)?)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let params = r_table(&mut r)?;
        let optimizer = r_optimizer(&mut r)?;
        let critic = match r_bytes::<1>(&mut r)?[0] {
            0 => None,
            1 => Some(CriticState {
                params: r_table(&mut r)?,
                optimizer: r_optimizer(&mut r)?,
            }),
            other => return Err(Error::Checkpoint(format!("bad critic flag {other}"))),
        };
        let rng = RngState {
            seed: r_u64(&mut r)?,
            step: r_u64(&mut r)?,
        };
        let codebook_part = serde_json::from_str(&r_str(&mut r)?)
            .map_err(|e| Error::Checkpoint(format!("codebook part: {e}")))?;
        let codebook = read_tensor(&mut r)?;
        let motion_digest = r_str(&mut r)?;
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            config,
            params,
            optimizer,
            critic,
            rng,
            codebook,
            codebook_part,
            motion_digest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Rebuilds the model with the stored weights and codebook.
    pub fn model(&self) -> Result<FastTalker> {
        let arch = self.config.arch.resolve()?;
        let mut model = FastTalker::new(arch, self.config.model.clone(), self.config.seed)?;
        model.store.load_from(&self.params)?;
        model.codebook = Arc::new(Codebook::from_table(self.codebook.clone(), self.codebook_part)?);
        let motion = MotionDecoder::frozen();
        if motion.digest() != self.motion_digest {
            return Err(Error::Checkpoint("motion decoder digest differs from this build's frozen decoder".into()));
        }
        Ok(model)
    }

    /// Rebuilds the trainer, optimizer and critic state included.
    pub fn trainer(&self) -> Result<Trainer> {
        let model = self.model()?;
        let mut trainer = Trainer::new(model, self.config.train.clone(), self.rng.seed)?;
        trainer.adam = self.optimizer.clone().into_adam(&trainer.model.store)?;
        trainer.step = self.rng.step;
        trainer.critic = match &self.critic {
            None => None,
            Some(c) => {
                let mut store = ParamStore::new();
                let mut r = rng::stream(self.rng.seed, &format!("{}/critic", rng::streams::INIT));
                let net = Discriminator::new(&mut store, &mut r)?;
                store.load_from(&c.params)?;
                let adam = c.optimizer.clone().into_adam(&store)?;
                Some(Critic { net, store, adam })
            }
        };
        Ok(trainer)
    }
}
