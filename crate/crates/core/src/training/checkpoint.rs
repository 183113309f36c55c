//! SVCK checkpoints.
//!
//! Layout (little-endian): magic `SVCK`, u32 version, u64 step, u32 tensor
//! count, then per tensor a u16 name length, the name, a u8 dtype
//! (0 f32, 1 f64, 2 u64), u32 ndim, u32 dims and the raw data. A u64 RNG
//! state and the 32-byte config hash close the file.

use std::io::Write;
use std::path::Path;

use super::{Result, TrainError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl TensorData {
    pub fn dtype(&self) -> u8 {
        match self {
            Self::F32(_) => 0,
            Self::F64(_) => 1,
            Self::U64(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::F64(v) => v.len(),
            Self::U64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBundle {
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
    pub rng_state: u64,
    pub config_hash: [u8; 32],
}

impl CheckpointBundle {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

pub fn encode_checkpoint(b: &CheckpointBundle) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&b.step.to_le_bytes());
    out.extend_from_slice(&(b.tensors.len() as u32).to_le_bytes());
    for t in &b.tensors {
        let name = t.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(TrainError::Config(format!("tensor name too long: {}", t.name)));
        }
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(TrainError::Config(format!(
                "tensor {} has dims {:?} but {} values",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.data.dtype());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &t.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    out.extend_from_slice(&b.rng_state.to_le_bytes());
    out.extend_from_slice(&b.config_hash);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            TrainError::Corrupt(format!(
                "truncated at byte {} (needed {n} more, file has {})",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointBundle> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(TrainError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Version(version));
    }
    let step = r.u64()?;
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| TrainError::Corrupt("tensor name is not utf-8".into()))?;
        let dtype = r.u8()?;
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| TrainError::Corrupt(format!("tensor {name} dims overflow")))?;
        let width = if dtype == 0 { 4 } else { 8 };
        let raw = r.take(count.checked_mul(width).ok_or_else(|| TrainError::Corrupt("size overflow".into()))?)?;
        let data = match dtype {
            0 => TensorData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            1 => TensorData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            2 => TensorData::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
            other => return Err(TrainError::Corrupt(format!("tensor {name} has unknown dtype {other}"))),
        };
        tensors.push(NamedTensor { name, dims, data });
    }
    let rng_state = r.u64()?;
    let config_hash = r.array::<32>()?;
    if r.pos != bytes.len() {
        return Err(TrainError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(CheckpointBundle {
        step,
        tensors,
        rng_state,
        config_hash,
    })
}

/// Writes through a temporary file in the same directory, then renames.
pub fn save_checkpoint(path: impl AsRef<Path>, b: &CheckpointBundle) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(b)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointBundle> {
    decode_checkpoint(&std::fs::read(path)?)
}
