//! Binary feature cache.
//!
//! All integers are little-endian `u32`, all reals little-endian `f32`:
//!
//! ```text
//! b"MIX2FEAT" | version: u8 | count | n_classes
//! count × { rows | frames | rows·frames f32 | ceil(n_classes/32) label words | recording | offset_s: f32 }
//! n_classes × { len | utf-8 class name }
//! n_recordings | n_recordings × { len | utf-8 recording name }
//! ```
//!
//! Bit `c % 32` of label word `c / 32` is set when class `c` is active.

use std::path::Path;

use super::{Example, MultiLabelDataset};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 8] = b"MIX2FEAT";
pub const CACHE_VERSION: u8 = 1;

fn label_words(n_classes: usize) -> usize {
    n_classes.div_ceil(32)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(ds: &MultiLabelDataset) -> Vec<u8> {
    let words = label_words(ds.num_classes());
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.push(CACHE_VERSION);
    put_u32(&mut out, ds.len());
    put_u32(&mut out, ds.num_classes());
    for e in &ds.examples {
        put_u32(&mut out, e.rows);
        put_u32(&mut out, e.frames);
        for &v in &e.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut bits = vec![0u32; words];
        for (c, &on) in e.labels.iter().enumerate() {
            if on {
                bits[c / 32] |= 1 << (c % 32);
            }
        }
        for w in bits {
            out.extend_from_slice(&w.to_le_bytes());
        }
        put_u32(&mut out, e.recording as usize);
        out.extend_from_slice(&e.offset_s.to_le_bytes());
    }
    for name in &ds.class_names {
        put_str(&mut out, name);
    }
    put_u32(&mut out, ds.recording_names.len());
    for name in &ds.recording_names {
        put_str(&mut out, name);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(self.path, format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()?;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::format(self.path, "name is not utf-8"))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<MultiLabelDataset> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(8)? != CACHE_MAGIC {
        return Err(Error::format(path, "not a feature cache (bad magic)"));
    }
    let version = r.take(1)?[0];
    if version != CACHE_VERSION {
        return Err(Error::format(path, format!("unsupported cache version {version}")));
    }
    let count = r.u32()?;
    let n_classes = r.u32()?;
    let words = label_words(n_classes);
    let mut examples = Vec::with_capacity(count.min(bytes.len() / 16));
    for _ in 0..count {
        let rows = r.u32()?;
        let frames = r.u32()?;
        let n = rows
            .checked_mul(frames)
            .ok_or_else(|| Error::format(path, "feature shape overflow"))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format(path, "feature shape overflow"))?)?;
        let features = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let mut labels = vec![false; n_classes];
        for w in 0..words {
            let bits = r.u32()? as u32;
            for b in 0..32 {
                let c = w * 32 + b;
                if bits & (1 << b) != 0 {
                    if c >= n_classes {
                        return Err(Error::format(path, format!("label bit {c} beyond {n_classes} classes")));
                    }
                    labels[c] = true;
                }
            }
        }
        let recording = r.u32()? as u32;
        let offset_s = r.f32()?;
        examples.push(Example {
            rows,
            frames,
            features,
            labels,
            recording,
            offset_s,
        });
    }
    let class_names = (0..n_classes).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let n_recordings = r.u32()?;
    let recording_names = (0..n_recordings).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after recording table"));
    }
    let ds = MultiLabelDataset {
        class_names,
        recording_names,
        examples,
    };
    ds.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(ds)
}

pub fn load(path: &Path) -> Result<MultiLabelDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
