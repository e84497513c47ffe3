//! Binary checkpoints.
//!
//! Layout (little-endian): magic `DACP`, `u32` version (1), `u32` layer
//! count, then per layer a `u8` kind tag, four `u32` dims and the layer's
//! `f32` parameters.
//!
//! | tag | layer           | dims                 | payload                 |
//! |-----|-----------------|----------------------|-------------------------|
//! | 1   | conv2d          | kh, kw, c, n         | kh·kw·c·n weights       |
//! | 2   | dense           | inputs, outputs, 0, 0| weights, then biases    |
//! | 3   | relu            | 0, 0, 0, 0           |                         |
//! | 4   | maxpool2        | 0, 0, 0, 0           |                         |
//! | 5   | flatten         | 0, 0, 0, 0           |                         |
//! | 6   | residual-add    | from, 0, 0, 0        |                         |
//! | 7   | softmax-ce-head | 0, 0, 0, 0           |                         |
//!
//! Conv layers are stored as stride 1 with same padding; other conv
//! geometries cannot be saved in version 1.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Dense, Layer, Network};
use crate::tensor::{Shape4, WeightTensor};

pub const MAGIC: [u8; 4] = *b"DACP";
pub const VERSION: u32 = 1;

const TAG_CONV: u8 = 1;
const TAG_DENSE: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_MAXPOOL: u8 = 4;
const TAG_FLATTEN: u8 = 5;
const TAG_ADD: u8 = 6;
const TAG_HEAD: u8 = 7;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("dim {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f64]) {
    for &v in vs {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode(net: &Network) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, net.layers().len())?;
    for (i, l) in net.layers().iter().enumerate() {
        let (tag, dims) = match l {
            Layer::Conv2d(c) => {
                let s = c.weight.shape();
                if c.stride != 1 || c.padding != (s.kh - 1) / 2 || s.kh != s.kw {
                    return Err(Error::Checkpoint(format!(
                        "layer {i}: only square stride-1 same-padded convs can be saved"
                    )));
                }
                (TAG_CONV, [s.kh, s.kw, s.c, s.n])
            }
            Layer::Dense(d) => (TAG_DENSE, [d.inputs, d.outputs, 0, 0]),
            Layer::Relu => (TAG_RELU, [0; 4]),
            Layer::MaxPool2 => (TAG_MAXPOOL, [0; 4]),
            Layer::Flatten => (TAG_FLATTEN, [0; 4]),
            Layer::ResidualAdd { from } => (TAG_ADD, [*from, 0, 0, 0]),
            Layer::SoftmaxCeHead => (TAG_HEAD, [0; 4]),
        };
        out.push(tag);
        for d in dims {
            put_u32(&mut out, d)?;
        }
        match l {
            Layer::Conv2d(c) => put_f32s(&mut out, c.weight.values()),
            Layer::Dense(d) => {
                put_f32s(&mut out, &d.weight);
                put_f32s(&mut out, &d.bias);
            }
            _ => {}
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::TruncatedPayload {
                offset: self.bytes.len() as u64,
            }),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Checkpoint(format!("payload of {n} values overflows")))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| Error::BadMagic {
        found: {
            let mut m = [0u8; 4];
            m[..bytes.len().min(4)].copy_from_slice(&bytes[..bytes.len().min(4)]);
            m
        },
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let tag = r.u8()?;
        let mut d = [0usize; 4];
        for v in d.iter_mut() {
            *v = r.u32()? as usize;
        }
        let layer = match tag {
            TAG_CONV => {
                let shape = Shape4::new(d[0], d[1], d[2], d[3])
                    .map_err(|e| Error::Checkpoint(format!("layer {i}: {e}")))?;
                let w = WeightTensor::from_vec(shape, r.f32s(shape.len())?)
                    .map_err(|e| Error::Checkpoint(format!("layer {i}: {e}")))?;
                Layer::Conv2d(Conv2d::same(w))
            }
            TAG_DENSE => {
                let weight = r.f32s(d[0].saturating_mul(d[1]))?;
                let bias = r.f32s(d[1])?;
                Layer::Dense(
                    Dense::new(d[0], d[1], weight, bias)
                        .map_err(|e| Error::Checkpoint(format!("layer {i}: {e}")))?,
                )
            }
            TAG_RELU => Layer::Relu,
            TAG_MAXPOOL => Layer::MaxPool2,
            TAG_FLATTEN => Layer::Flatten,
            TAG_ADD => Layer::ResidualAdd { from: d[0] },
            TAG_HEAD => Layer::SoftmaxCeHead,
            other => {
                return Err(Error::Checkpoint(format!(
                    "layer {i}: unknown kind tag {other} at byte offset {}",
                    r.pos - 17
                )))
            }
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last layer",
            bytes.len() - r.pos
        )));
    }
    Network::new(layers).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode(net)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
