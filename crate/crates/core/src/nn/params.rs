//! Flat parameter vectors with a named, ordered layout.
//!
//! A [`ParamVector`] is the unit exchanged between federated clients and the
//! server, updated by the optimizers, and written to checkpoint files. The
//! on-disk container ("FMP1") is:
//!
//! ```text
//! magic      4 bytes   b"FMP1"
//! entries    u32 LE
//! per entry: u16 LE name length, UTF-8 name, u32 LE rows, u32 LE cols
//! values     u64 LE count, then count × f64 LE
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const FMP_MAGIC: &[u8; 4] = b"FMP1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
        }
    }

    pub fn size(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Vec<ParamSpec>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Vec<ParamSpec>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = layout.iter().map(ParamSpec::size).sum();
        if values.len() != expected {
            return Err(Error::Layout(format!(
                "layout describes {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Vec<ParamSpec>) -> Self {
        let n = layout.iter().map(ParamSpec::size).sum();
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    /// Builds a vector from named matrices in the given order.
    pub fn from_named(parts: &[(&str, &Matrix)]) -> Self {
        let mut layout = Vec::with_capacity(parts.len());
        let mut values = Vec::with_capacity(parts.iter().map(|(_, m)| m.len()).sum());
        for (name, m) in parts {
            layout.push(ParamSpec::new(*name, m.rows(), m.cols()));
            values.extend_from_slice(m.as_slice());
        }
        Self { layout, values }
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            return Ok(());
        }
        let first_diff = self
            .layout
            .iter()
            .zip(&other.layout)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("{}{:?} vs {}{:?}", a.name, (a.rows, a.cols), b.name, (b.rows, b.cols)))
            .unwrap_or_else(|| format!("{} vs {} entries", self.layout.len(), other.layout.len()));
        Err(Error::Layout(first_diff))
    }

    /// Iterates `(spec, values)` per named tensor.
    pub fn entries(&self) -> impl Iterator<Item = (&ParamSpec, &[f64])> {
        let mut offset = 0;
        self.layout.iter().map(move |spec| {
            let s = &self.values[offset..offset + spec.size()];
            offset += spec.size();
            (spec, s)
        })
    }

    /// Name of the tensor that owns flat index `idx`.
    pub fn name_at(&self, idx: usize) -> &str {
        let mut offset = 0;
        for spec in &self.layout {
            offset += spec.size();
            if idx < offset {
                return &spec.name;
            }
        }
        "<out of range>"
    }

    /// Copies out one named tensor.
    pub fn tensor(&self, name: &str) -> Option<Matrix> {
        self.entries()
            .find(|(spec, _)| spec.name == name)
            .map(|(spec, vals)| {
                Matrix::from_vec(spec.rows, spec.cols, vals.to_vec()).expect("layout consistent")
            })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.layout.is_empty() {
            return Err(Error::Format("refusing to serialize an empty layout".into()));
        }
        let mut out = Vec::with_capacity(16 + self.values.len() * 8);
        out.extend_from_slice(FMP_MAGIC);
        out.extend_from_slice(&(self.layout.len() as u32).to_le_bytes());
        for spec in &self.layout {
            let name = spec.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Format(format!("tensor name too long: {}", spec.name)))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(spec.rows as u32).to_le_bytes());
            out.extend_from_slice(&(spec.cols as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != FMP_MAGIC {
            return Err(Error::Format("bad magic, expected FMP1".into()));
        }
        let n_entries = cur.u32()? as usize;
        if n_entries == 0 {
            return Err(Error::Format("empty layout".into()));
        }
        let mut layout = Vec::with_capacity(n_entries.min(1024));
        for _ in 0..n_entries {
            let len = cur.u16()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            layout.push(ParamSpec { name, rows, cols });
        }
        let count = cur.u64()? as usize;
        let expected: usize = layout.iter().map(ParamSpec::size).sum();
        if count != expected {
            return Err(Error::Format(format!(
                "value count {count} disagrees with layout total {expected}"
            )));
        }
        let raw = cur.take(count.checked_mul(8).ok_or_else(|| Error::Format("value count overflow".into()))?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self { layout, values })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn serialize_params(params: &ParamVector) -> Result<Vec<u8>> {
    params.to_bytes()
}

pub fn deserialize_params(bytes: &[u8]) -> Result<ParamVector> {
    ParamVector::from_bytes(bytes)
}
