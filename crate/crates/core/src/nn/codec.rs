//! Little-endian flat encoding of layer stacks.
//!
//! A network block is laid out as
//!
//! ```text
//! u32   layer count
//! per layer:
//!   u32        in_dim
//!   u32        out_dim
//!   u8         activation (0 relu, 1 leaky-relu, 2 tanh, 3 sigmoid, 4 linear, 5 softmax)
//!   f64        activation parameter (leaky-relu slope, otherwise 0)
//!   u8         weight norm flag (0 or 1)
//!   f64        noise std
//!   f64 x o*i  direction, row-major
//!   f64 x o    gain (only when weight norm is on)
//!   f64 x o    bias
//! ```
//!
//! Floats are written with `to_le_bytes`, so a decode of an encode is bit-exact.

use super::{Activation, LayerParams, LayerSpec, Mlp, MlpParams};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::ModelFormat(format!(
                "truncated at offset {}: need {n} bytes, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::ModelFormat(format!("length {n} overflows at offset {}", self.pos))
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn activation_tag(a: Activation) -> (u8, f64) {
    match a {
        Activation::Relu => (0, 0.0),
        Activation::LeakyRelu { slope } => (1, slope),
        Activation::Tanh => (2, 0.0),
        Activation::Sigmoid => (3, 0.0),
        Activation::Linear => (4, 0.0),
        Activation::Softmax => (5, 0.0),
    }
}

fn activation_from_tag(tag: u8, param: f64, offset: usize) -> Result<Activation> {
    Ok(match tag {
        0 => Activation::Relu,
        1 => Activation::LeakyRelu { slope: param },
        2 => Activation::Tanh,
        3 => Activation::Sigmoid,
        4 => Activation::Linear,
        5 => Activation::Softmax,
        t => {
            return Err(Error::ModelFormat(format!(
                "unknown activation tag {t} at offset {offset}"
            )))
        }
    })
}

pub fn write_mlp(w: &mut Writer, mlp: &Mlp) {
    w.u32(mlp.specs().len() as u32);
    for (spec, p) in mlp.specs().iter().zip(&mlp.params().layers) {
        w.u32(spec.in_dim as u32);
        w.u32(spec.out_dim as u32);
        let (tag, param) = activation_tag(spec.activation);
        w.u8(tag);
        w.f64(param);
        w.u8(spec.weight_norm as u8);
        w.f64(spec.noise_std);
        w.f64s(p.direction.data());
        if let Some(g) = &p.gain {
            w.f64s(g.data());
        }
        w.f64s(p.bias.data());
    }
}

pub fn read_mlp(r: &mut Reader<'_>) -> Result<Mlp> {
    let count = r.u32()? as usize;
    let mut specs = Vec::with_capacity(count.min(1024));
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let tag_offset = r.offset();
        let tag = r.u8()?;
        let param = r.f64()?;
        let activation = activation_from_tag(tag, param, tag_offset)?;
        let weight_norm = match r.u8()? {
            0 => false,
            1 => true,
            b => {
                return Err(Error::ModelFormat(format!(
                    "weight norm flag {b} at offset {}",
                    r.offset() - 1
                )))
            }
        };
        let noise_std = r.f64()?;
        let direction = Tensor::new([out_dim, in_dim], r.f64s(out_dim * in_dim)?)?;
        let gain = if weight_norm {
            Some(Tensor::new([out_dim], r.f64s(out_dim)?)?)
        } else {
            None
        };
        let bias = Tensor::new([out_dim], r.f64s(out_dim)?)?;
        specs.push(LayerSpec {
            in_dim,
            out_dim,
            activation,
            weight_norm,
            noise_std,
        });
        layers.push(LayerParams {
            direction,
            gain,
            bias,
        });
    }
    Mlp::from_parts(specs, MlpParams { layers })
}
