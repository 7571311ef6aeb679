//! Checkpoints and the little-endian tensor container used for
//! checkpoints, feature files and posterior files.
//!
//! Layout: `"DSTL"`, version `u32`, tensor count `u32`, then per tensor
//! name length `u32`, UTF-8 name, rank `u32`, dims `u32` each, values as
//! `f32`; trailing `u64` step and `u8` phase tag.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::{Error, ParamSet, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"DSTL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    BurnIn,
    TrainMain,
    FineTune,
}

impl Phase {
    pub fn tag(self) -> u8 {
        match self {
            Phase::BurnIn => 0,
            Phase::TrainMain => 1,
            Phase::FineTune => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Phase::BurnIn),
            1 => Ok(Phase::TrainMain),
            2 => Ok(Phase::FineTune),
            t => Err(Error::Checkpoint(format!("unknown phase tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::BurnIn => "burn_in",
            Phase::TrainMain => "train_main",
            Phase::FineTune => "fine_tune",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub step: u64,
    pub phase: Phase,
}

impl Checkpoint {
    pub fn new(params: ParamSet, step: u64, phase: Phase) -> Self {
        Checkpoint { params, step, phase }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.params.num_values() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.push(self.phase.tag());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            params.insert(name, t).map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let phase = Phase::from_tag(r.take(1)?[0])?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { params, step, phase })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Element-wise mean of the final `min(last_n, len)` checkpoints; the
/// result carries the largest step and the phase of the last checkpoint.
pub fn average_checkpoints(checkpoints: &[Checkpoint], last_n: usize) -> Result<Checkpoint> {
    if checkpoints.is_empty() {
        return Err(Error::Checkpoint("no checkpoints to average".into()));
    }
    if last_n == 0 {
        return Err(Error::Checkpoint("last_n must be >= 1".into()));
    }
    let window = &checkpoints[checkpoints.len() - last_n.min(checkpoints.len())..];
    let first = &window[0];
    if window.iter().any(|c| !c.params.same_layout(&first.params)) {
        return Err(Error::Checkpoint("checkpoint names or shapes differ".into()));
    }
    let n = window.len() as f64;
    let mut sums: Vec<Vec<f64>> = first
        .params
        .iter()
        .map(|(_, t)| vec![0.0; t.data.len()])
        .collect();
    for c in window {
        for (acc, (_, t)) in sums.iter_mut().zip(c.params.iter()) {
            for (a, v) in acc.iter_mut().zip(&t.data) {
                *a += *v as f64;
            }
        }
    }
    let mut params = first.params.clone();
    for (acc, (_, t)) in sums.into_iter().zip(params.iter_mut()) {
        for (dst, s) in t.data.iter_mut().zip(acc) {
            *dst = (s / n) as f32;
        }
    }
    Ok(Checkpoint {
        params,
        step: window.iter().map(|c| c.step).max().unwrap_or(0),
        phase: window[window.len() - 1].phase,
    })
}
