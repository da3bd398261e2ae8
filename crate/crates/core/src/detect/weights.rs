//! CKW1 weight bundles.
//!
//! Layout (all integers little-endian): magic `CKW1`, `u32` tensor count, then
//! per tensor a `u16` name length, the UTF-8 name, a `u8` rank, `rank × u32`
//! dims and `prod(dims)` `f32` values in row-major order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CKW1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Format(format!(
                "tensor dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self { dims, data: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightBundle {
    pub tensors: BTreeMap<String, Tensor>,
}

impl WeightBundle {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::WeightMismatch(format!("missing tensor {name}")))
    }

    pub fn write_ckw<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(bytes)?;
            let rank = u8::try_from(t.dims.len())
                .map_err(|_| Error::Format(format!("rank too large for {name}")))?;
            w.write_all(&[rank])?;
            for d in &t.dims {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_ckw<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a CKW1 weight file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let count = u32::from_le_bytes(b4);
        let mut bundle = WeightBundle::default();
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let mut dims = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                r.read_exact(&mut b4)?;
                dims.push(u32::from_le_bytes(b4) as usize);
            }
            let n: usize = dims.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut b4)?;
                data.push(f32::from_le_bytes(b4));
            }
            if bundle.tensors.insert(name.clone(), Tensor { dims, data }).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
        }
        Ok(bundle)
    }
}

/// Batch-norm statistics for one convolution output.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BatchNorm {
    /// Applies the normalisation to a `[channels, spatial]` activation.
    pub fn apply(&self, x: &mut [f32], spatial: usize) {
        for (c, chunk) in x.chunks_mut(spatial).enumerate() {
            let inv = 1.0 / (self.var[c] + self.eps).sqrt();
            for v in chunk {
                *v = (*v - self.mean[c]) * inv * self.gamma[c] + self.beta[c];
            }
        }
    }
}

/// Folds batch norm into the preceding convolution's weight (`[out, ...]`)
/// and bias (`[out]`).
pub fn fold_batch_norm(weight: &mut Tensor, bias: &mut Tensor, bn: &BatchNorm) {
    let out = weight.dims[0];
    let per = weight.data.len() / out;
    for o in 0..out {
        let scale = bn.gamma[o] / (bn.var[o] + bn.eps).sqrt();
        for v in &mut weight.data[o * per..(o + 1) * per] {
            *v *= scale;
        }
        bias.data[o] = (bias.data[o] - bn.mean[o]) * scale + bn.beta[o];
    }
}
