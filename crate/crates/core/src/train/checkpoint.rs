//! Binary checkpoint format.
//!
//! ```text
//! "ARTS"  u32 version (1)  u32 entry count
//! per entry: u16 name length, name (UTF-8), u8 dtype (0 f32, 1 f64, 2 i64),
//!            u8 rank, rank × u32 dims, little-endian payload
//! ```
//!
//! All integers are little-endian.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::adam::AdamState;
use super::TrainState;
use crate::autodiff::BatchNormConfig;
use crate::error::{CheckpointError, Error, Result};
use crate::model::{ArtSeg, ArtSegConfig};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"ARTS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl Payload {
    pub fn dtype(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::F64(_) => 1,
            Payload::I64(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One named, shaped array.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u32>,
    pub payload: Payload,
}

impl Entry {
    fn ints(name: impl Into<String>, values: Vec<i64>) -> Self {
        Entry {
            name: name.into(),
            dims: vec![values.len() as u32],
            payload: Payload::I64(values),
        }
    }

    fn float(name: impl Into<String>, value: f64) -> Self {
        Entry {
            name: name.into(),
            dims: vec![],
            payload: Payload::F64(vec![value]),
        }
    }

    fn tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let dims = t.shape().iter().map(|&d| d as u32).collect();
        let mut bytes = Vec::with_capacity(t.len() * T::BYTES);
        for &x in t.data() {
            x.write_le(&mut bytes);
        }
        let payload = if T::DTYPE_CODE == 0 {
            Payload::F32(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
        } else {
            Payload::F64(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
        };
        Entry {
            name: name.into(),
            dims,
            payload,
        }
    }
}

/// Serializes entries in order.
pub fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.payload.dtype());
        out.push(e.dims.len() as u8);
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &e.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a whole checkpoint, rejecting duplicate names and trailing
/// bytes.
pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>, CheckpointError> {
    let mut r = Reader { bytes, at: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = r.u32("entry count")?;
    let mut names = HashSet::new();
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| CheckpointError::BadName)?;
        if !names.insert(name.to_string()) {
            return Err(CheckpointError::DuplicateName(name.to_string()));
        }
        let dtype = r.u8("dtype")?;
        if dtype > 2 {
            return Err(CheckpointError::UnknownDtype(dtype));
        }
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>, _>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or(CheckpointError::Truncated("payload"))?;
        let width = if dtype == 0 { 4 } else { 8 };
        let raw = r.take(n.checked_mul(width).ok_or(CheckpointError::Truncated("payload"))?, "payload")?;
        let payload = match dtype {
            0 => Payload::F32(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect()),
            1 => Payload::F64(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()),
            _ => Payload::I64(raw.chunks_exact(8).map(|b| i64::from_le_bytes(b.try_into().unwrap())).collect()),
        };
        entries.push(Entry {
            name: name.to_string(),
            dims,
            payload,
        });
    }
    if r.at != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.at));
    }
    Ok(entries)
}

fn config_entries(c: &ArtSegConfig) -> Vec<Entry> {
    let ints = |v: &[usize]| v.iter().map(|&x| x as i64).collect();
    vec![
        Entry::ints("config.in_channels", vec![c.in_channels as i64]),
        Entry::ints("config.num_classes", vec![c.num_classes as i64]),
        Entry::ints("config.encoder_channels", ints(&c.encoder_channels)),
        Entry::ints("config.bottleneck_channels", vec![c.bottleneck_channels as i64]),
        Entry::ints("config.decoder_channels", ints(&c.decoder_channels)),
        Entry::ints("config.pool_kernels", ints(&c.pool_kernels)),
        Entry::ints("config.recurrence_steps", vec![c.recurrence_steps as i64]),
        Entry::ints("config.units_per_block", vec![c.units_per_block as i64]),
        Entry::ints("config.bottleneck_residual", vec![c.bottleneck_residual as i64]),
        Entry::float("config.width_multiplier", c.width_multiplier),
        Entry::float("config.bn_momentum", c.batch_norm.momentum),
        Entry::float("config.bn_eps", c.batch_norm.eps),
    ]
}

/// Every entry describing `model` and its optimizer state, in a fixed
/// order.
pub fn to_entries<T: Scalar>(model: &ArtSeg<T>, state: &TrainState<T>) -> Vec<Entry> {
    let store = model.store();
    let mut out = config_entries(model.config());
    for p in store.params() {
        out.push(Entry::tensor(format!("param.{}", p.name), &p.value));
    }
    for b in store.buffers() {
        out.push(Entry::tensor(format!("buffer.{}", b.name), &b.value));
    }
    for (p, m) in store.params().iter().zip(&state.adam.m) {
        out.push(Entry::tensor(format!("adam.m.{}", p.name), m));
    }
    for (p, v) in store.params().iter().zip(&state.adam.v) {
        out.push(Entry::tensor(format!("adam.v.{}", p.name), v));
    }
    out.push(Entry::ints("adam.step", vec![state.adam.step as i64]));
    out.push(Entry::ints("train.epoch", vec![state.epoch as i64]));
    out
}

struct Lookup {
    entries: Vec<Option<Entry>>,
    index: std::collections::HashMap<String, usize>,
}

impl Lookup {
    fn new(entries: Vec<Entry>) -> Self {
        let index = entries.iter().enumerate().map(|(i, e)| (e.name.clone(), i)).collect();
        Lookup {
            entries: entries.into_iter().map(Some).collect(),
            index,
        }
    }

    fn take(&mut self, name: &str) -> Result<Entry, CheckpointError> {
        self.index
            .get(name)
            .and_then(|&i| self.entries[i].take())
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    fn ints(&mut self, name: &str, len: usize) -> Result<Vec<usize>, CheckpointError> {
        let e = self.take(name)?;
        let bad = |detail: String| CheckpointError::Entry {
            name: name.to_string(),
            detail,
        };
        match e.payload {
            Payload::I64(v) if v.len() == len => v
                .into_iter()
                .map(|x| usize::try_from(x).map_err(|_| bad(format!("negative value {x}"))))
                .collect(),
            other => Err(bad(format!("expected {len} int64 values, found dtype {} × {}", other.dtype(), other.len()))),
        }
    }

    fn int(&mut self, name: &str) -> Result<usize, CheckpointError> {
        Ok(self.ints(name, 1)?[0])
    }

    fn float(&mut self, name: &str) -> Result<f64, CheckpointError> {
        match self.take(name)?.payload {
            Payload::F64(v) if v.len() == 1 => Ok(v[0]),
            other => Err(CheckpointError::Entry {
                name: name.to_string(),
                detail: format!("expected one float64, found dtype {} × {}", other.dtype(), other.len()),
            }),
        }
    }

    fn tensor<T: Scalar>(&mut self, name: &str, shape: &[usize]) -> Result<Tensor<T>, CheckpointError> {
        let e = self.take(name)?;
        let dims: Vec<usize> = e.dims.iter().map(|&d| d as usize).collect();
        let bad = |detail: String| CheckpointError::Entry {
            name: name.to_string(),
            detail,
        };
        if dims != shape {
            return Err(bad(format!("shape {dims:?}, model expects {shape:?}")));
        }
        if e.payload.dtype() != T::DTYPE_CODE {
            return Err(bad(format!("dtype {}, model expects {}", e.payload.dtype(), T::DTYPE_CODE)));
        }
        let mut bytes = Vec::with_capacity(e.payload.len() * T::BYTES);
        match &e.payload {
            Payload::F32(v) => v.iter().for_each(|x| bytes.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| bytes.extend_from_slice(&x.to_le_bytes())),
            Payload::I64(_) => unreachable!("dtype checked"),
        }
        let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
        Ok(Tensor::new(shape.to_vec(), data).expect("shape checked"))
    }

    fn leftover(&self) -> Option<&str> {
        self.entries.iter().flatten().next().map(|e| e.name.as_str())
    }
}

fn config_from(l: &mut Lookup) -> Result<ArtSegConfig, CheckpointError> {
    let arr4 = |v: Vec<usize>| -> [usize; 4] { v.try_into().expect("length checked") };
    Ok(ArtSegConfig {
        in_channels: l.int("config.in_channels")?,
        num_classes: l.int("config.num_classes")?,
        encoder_channels: arr4(l.ints("config.encoder_channels", 4)?),
        bottleneck_channels: l.int("config.bottleneck_channels")?,
        decoder_channels: arr4(l.ints("config.decoder_channels", 4)?),
        pool_kernels: arr4(l.ints("config.pool_kernels", 4)?),
        recurrence_steps: l.int("config.recurrence_steps")?,
        units_per_block: l.int("config.units_per_block")?,
        bottleneck_residual: l.int("config.bottleneck_residual")? != 0,
        width_multiplier: l.float("config.width_multiplier")?,
        batch_norm: BatchNormConfig {
            momentum: l.float("config.bn_momentum")?,
            eps: l.float("config.bn_eps")?,
        },
    })
}

/// Rebuilds a model and its optimizer state from decoded entries. Every
/// entry must be consumed.
pub fn from_entries<T: Scalar>(entries: Vec<Entry>) -> Result<(ArtSeg<T>, TrainState<T>)> {
    let mut l = Lookup::new(entries);
    let config = config_from(&mut l)?;
    let mut model = ArtSeg::<T>::uninitialized(config).map_err(|e| CheckpointError::Entry {
        name: "config".into(),
        detail: e.to_string(),
    })?;
    let mut adam = AdamState::new(model.store());
    let store = model.store_mut();
    for p in store.params_mut() {
        p.value = l.tensor(&format!("param.{}", p.name), p.value.shape())?;
    }
    for b in store.buffers_mut() {
        b.value = l.tensor(&format!("buffer.{}", b.name), b.value.shape())?;
    }
    for (p, m) in store.params().iter().zip(&mut adam.m) {
        *m = l.tensor(&format!("adam.m.{}", p.name), p.value.shape())?;
    }
    for (p, v) in store.params().iter().zip(&mut adam.v) {
        *v = l.tensor(&format!("adam.v.{}", p.name), p.value.shape())?;
    }
    adam.step = l.int("adam.step")? as u64;
    let epoch = l.int("train.epoch")?;
    if let Some(name) = l.leftover() {
        return Err(CheckpointError::Entry {
            name: name.to_string(),
            detail: "not part of this model".into(),
        }
        .into());
    }
    Ok((model, TrainState { adam, epoch }))
}

pub fn checkpoint_bytes<T: Scalar>(model: &ArtSeg<T>, state: &TrainState<T>) -> Vec<u8> {
    encode(&to_entries(model, state))
}

pub fn from_checkpoint_bytes<T: Scalar>(bytes: &[u8]) -> Result<(ArtSeg<T>, TrainState<T>)> {
    from_entries(decode(bytes)?)
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, model: &ArtSeg<T>, state: &TrainState<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(model, state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(ArtSeg<T>, TrainState<T>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_checkpoint_bytes(&bytes)
}
