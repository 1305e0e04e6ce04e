//! Binary checkpoint format.
//!
//! All integers and floats are little-endian. Layout:
//!
//! ```text
//! magic "LCATCKPT" | u32 version (1)
//! u32 input_dim | u32 action_dim | u32 hidden_count | u32 hidden[hidden_count]
//! f64 progress | u64 iteration
//! u8 has_normalizer [f64 count | f64 mean[input_dim] | f64 var[input_dim]]
//! u32 block_count, then per block: u64 len | f64 values[len]
//! u64 adam_step | f64 beta1 | f64 beta2 | f64 eps | f64 m[...] | f64 v[...]
//! u32 constraint_count, then per constraint:
//!     u32 name_len | name bytes | f64 cmax | f64 ema | f64 floor | u8 initialized
//! u64 FNV-1a hash of every preceding byte
//! ```
//!
//! Parameter blocks follow [`PolicyParameters::blocks`] order: actor layers
//! (weight, bias), critic layers (weight, bias), then the action log-std.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::constraints::ConstraintState;
use crate::nn::{Linear, Mlp};
use crate::normalizer::RunningNormalizer;
use crate::policy::{NetworkShape, PolicyParameters};

pub const MAGIC: &[u8; 8] = b"LCATCKPT";
pub const VERSION: u32 = 1;
const MAX_WIDTH: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParameters,
    pub normalizer: Option<RunningNormalizer>,
    /// `(constraint name, tracker)` in registration order.
    pub constraints: Vec<(String, ConstraintState)>,
    pub progress: f64,
    pub iteration: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
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
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        if n > self.bytes.len() / 8 {
            return Err(CheckpointError::Truncated(self.pos));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn len(&mut self) -> Result<usize, CheckpointError> {
        Ok(self.u32()? as usize)
    }
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

fn empty_mlp(input: usize, hidden: &[usize], output: usize) -> Mlp {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    Mlp {
        layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let shape = &self.params.shape;
        w.u32(shape.input_dim as u32);
        w.u32(shape.action_dim as u32);
        w.u32(shape.hidden.len() as u32);
        shape.hidden.iter().for_each(|&h| w.u32(h as u32));
        w.f64(self.progress);
        w.u64(self.iteration);
        match &self.normalizer {
            Some(n) => {
                w.u8(1);
                w.f64(n.count);
                w.f64s(&n.mean);
                w.f64s(&n.var);
            }
            None => w.u8(0),
        }
        let blocks = self.params.blocks();
        w.u32(blocks.len() as u32);
        for b in &blocks {
            w.u64(b.len() as u64);
            w.f64s(b);
        }
        let opt = &self.params.optimizer;
        w.u64(opt.step);
        w.f64(opt.beta1);
        w.f64(opt.beta2);
        w.f64(opt.eps);
        opt.m.iter().for_each(|m| w.f64s(m));
        opt.v.iter().for_each(|v| w.f64s(v));
        w.u32(self.constraints.len() as u32);
        for (name, state) in &self.constraints {
            w.u32(name.len() as u32);
            w.0.extend_from_slice(name.as_bytes());
            w.f64(state.cmax());
            w.f64(state.ema_coefficient);
            w.f64(state.floor);
            w.u8(u8::from(state.is_initialized()));
        }
        let hash = fnv1a(&w.0);
        w.u64(hash);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 20 {
            return Err(CheckpointError::Truncated(bytes.len()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let mut r = Reader { bytes: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(CheckpointError::Checksum);
        }
        let input_dim = r.len()?;
        let action_dim = r.len()?;
        let n_hidden = r.len()?;
        if n_hidden > 64 {
            return Err(corrupt(format!("{n_hidden} hidden layers")));
        }
        let hidden = (0..n_hidden).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
        if [input_dim, action_dim].iter().chain(&hidden).any(|&d| d > MAX_WIDTH) {
            return Err(corrupt("layer width out of range"));
        }
        let shape = NetworkShape::new(input_dim, &hidden, action_dim);
        shape.validate().map_err(|e| corrupt(e.to_string()))?;
        let progress = r.f64()?;
        let iteration = r.u64()?;
        let normalizer = match r.u8()? {
            0 => None,
            1 => {
                let count = r.f64()?;
                let mean = r.f64s(input_dim)?;
                let var = r.f64s(input_dim)?;
                Some(RunningNormalizer { mean, var, count })
            }
            f => return Err(corrupt(format!("normalizer flag {f}"))),
        };

        let mut params = PolicyParameters::from_parts(
            shape.clone(),
            empty_mlp(input_dim, &hidden, action_dim),
            empty_mlp(input_dim, &hidden, 1),
            vec![0.0; action_dim],
        );
        let sizes = params.block_sizes();
        let n_blocks = r.len()?;
        if n_blocks != sizes.len() {
            return Err(corrupt(format!("{n_blocks} parameter blocks, expected {}", sizes.len())));
        }
        {
            let mut blocks = params.blocks_mut();
            for (b, block) in blocks.iter_mut().enumerate() {
                let len = r.u64()? as usize;
                if len != block.len() {
                    return Err(corrupt(format!("block {b} has {len} values, expected {}", block.len())));
                }
                block.copy_from_slice(&r.f64s(len)?);
            }
        }
        let opt = &mut params.optimizer;
        opt.step = r.u64()?;
        opt.beta1 = r.f64()?;
        opt.beta2 = r.f64()?;
        opt.eps = r.f64()?;
        for (i, &n) in sizes.iter().enumerate() {
            opt.m[i] = r.f64s(n)?;
        }
        for (i, &n) in sizes.iter().enumerate() {
            opt.v[i] = r.f64s(n)?;
        }
        let n_constraints = r.len()?;
        let mut constraints = Vec::new();
        for _ in 0..n_constraints {
            let len = r.len()?;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| corrupt("constraint name is not UTF-8"))?;
            let cmax = r.f64()?;
            let ema = r.f64()?;
            let floor = r.f64()?;
            let initialized = r.u8()? != 0;
            if !(ema > 0.0 && ema < 1.0 && floor > 0.0 && cmax.is_finite()) {
                return Err(corrupt(format!("constraint tracker for {name}")));
            }
            let mut state = ConstraintState::restored(cmax, initialized);
            state.ema_coefficient = ema;
            state.floor = floor;
            constraints.push((name, state));
        }
        if r.pos != body.len() {
            return Err(corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }
        if !params.all_finite() {
            return Err(corrupt("non-finite parameter"));
        }
        Ok(Self {
            params,
            normalizer,
            constraints,
            progress,
            iteration,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
