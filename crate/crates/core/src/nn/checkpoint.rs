//! Versioned binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"MIX2CKPT" | version: u8 | tap_index: u32 | tensor count: u32
//! manifest, per tensor: name len: u32 | name: utf-8 | rows: u32 | cols: u32
//! payload: every tensor's rows*cols f32 values, row-major, in manifest order
//! ```
//!
//! Tensors are written in store order: `encoder.{k}.weight`, `encoder.{k}.bias`, …,
//! `head.weight`, `head.bias`, and the architecture is recovered from their shapes.

use std::path::Path;

use ndarray::Array2;

use super::network::{Architecture, TappedNetwork};
use super::params::{ParameterStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MIX2CKPT";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn encode(net: &TappedNetwork) -> Vec<u8> {
    let params = net.params();
    let mut out = Vec::with_capacity(32 + 4 * params.num_parameters());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(net.tap_index() as u32).to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for t in params.tensors() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        let (r, c) = t.value.dim();
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    for t in params.tensors() {
        for &v in t.value.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<TappedNetwork> {
    let bad = |msg: &str| Error::format(path, msg.to_string());
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.take(1).ok_or_else(|| bad("truncated header"))?[0];
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let tap = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let count = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
    if count < 2 || !count.is_multiple_of(2) {
        return Err(bad("tensor count must be a positive even number"));
    }
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32().ok_or_else(|| bad("truncated tensor name"))? as usize;
        let name = std::str::from_utf8(r.take(len).ok_or_else(|| bad("truncated tensor name"))?)
            .map_err(|_| bad("tensor name is not utf-8"))?
            .to_string();
        let rows = r.u32().ok_or_else(|| bad("truncated shape"))? as usize;
        let cols = r.u32().ok_or_else(|| bad("truncated shape"))? as usize;
        manifest.push((name, rows, cols));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, rows, cols) in manifest {
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_mul(4) <= bytes.len() - r.pos)
            .ok_or_else(|| bad(&format!("truncated payload in {name}")))?;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.f32().ok_or_else(|| bad(&format!("truncated payload in {name}")))? as f64);
        }
        let value = Array2::from_shape_vec((rows, cols), values).expect("length checked");
        tensors.push(Tensor::new(name, value));
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after last tensor"));
    }

    let weights: Vec<&Tensor> = tensors.iter().step_by(2).collect();
    let input_dim = weights[0].value.nrows();
    let mut hidden: Vec<usize> = weights.iter().map(|w| w.value.ncols()).collect();
    let num_classes = hidden.pop().expect("at least one layer");
    let arch = Architecture::new(input_dim, hidden, num_classes)
        .map_err(|e| bad(&e.to_string()))?;
    let mut net = TappedNetwork::from_store(arch, ParameterStore::new(tensors))?;
    net.set_tap_index(tap).map_err(|e| bad(&e.to_string()))?;
    Ok(net)
}

pub fn load(path: &Path) -> Result<TappedNetwork> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
