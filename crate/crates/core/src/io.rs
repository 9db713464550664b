//! Binary artifact formats.
//!
//! Tensor container (`PMW1`), all integers little-endian:
//!
//! ```text
//! "PMW1" | count: u32 | count × { name_len: u16 | name: utf-8 | rank: u8 | dims: u32 × rank | data: f64 × Π dims }
//! ```
//!
//! Mask file (`PMSK`):
//!
//! ```text
//! "PMSK" | version: u16 | count: u32 | count × { name_len: u16 | name | rank: u8 | dims: u32 × rank | bits }
//! ```
//!
//! Mask bits are row-major, packed most-significant bit first, and the final
//! byte of each tensor is zero-padded.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::{Layout, MaskKind, MaskSample, ProbVector};
use crate::net::{NetSpec, NetState};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PMW1";
pub const MASK_MAGIC: &[u8; 4] = b"PMSK";
pub const MASK_VERSION: u16 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], kind: &'static str) -> Self {
        Self { bytes, pos: 0, kind }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            kind: self.kind,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            self.err(format!(
                "truncated at byte {}: need {n} more, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != magic {
            return Err(self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn header(&mut self) -> Result<(String, Vec<usize>)> {
        let len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|e| self.err(format!("tensor name is not utf-8: {e}")))?
            .to_string();
        let rank = self.u8()? as usize;
        let dims = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims.contains(&0) {
            return Err(self.err(format!("{name}: zero dimension in {dims:?}")));
        }
        Ok((name, dims))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_header(out: &mut Vec<u8>, name: &str, dims: &[usize]) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Input(format!("tensor name too long: {} bytes", name.len())))?;
    let rank = u8::try_from(dims.len()).map_err(|_| Error::Input(format!("rank {} too large", dims.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(rank);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Input(format!("dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

fn count_u32(n: usize) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Input(format!("{n} tensors do not fit the header")))
}

/// Serializes named tensors as `PMW1`.
pub fn encode_tensors(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&count_u32(entries.len())?);
    for (name, t) in entries {
        put_header(&mut out, name, t.shape())?;
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(CHECKPOINT_MAGIC)?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let (name, dims) = r.header()?;
        let numel: usize = dims.iter().product();
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| r.err("tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        entries.push((name, Tensor::new(dims, data)?));
    }
    r.finish()?;
    Ok(entries)
}

pub fn state_entries(spec: &NetSpec, state: &NetState) -> Vec<(String, Tensor)> {
    spec.params()
        .iter()
        .zip(&state.params)
        .map(|(p, t)| (p.name.clone(), t.clone()))
        .collect()
}

/// Matches checkpoint entries to `spec` by name and shape.
pub fn state_from_entries(spec: &NetSpec, entries: Vec<(String, Tensor)>) -> Result<NetState> {
    if entries.len() != spec.params().len() {
        return Err(Error::Dimension(format!(
            "checkpoint has {} tensors, network expects {}",
            entries.len(),
            spec.params().len()
        )));
    }
    let mut params = Vec::with_capacity(entries.len());
    for p in spec.params() {
        let (_, t) = entries
            .iter()
            .find(|(name, _)| *name == p.name)
            .ok_or_else(|| Error::Dimension(format!("checkpoint lacks tensor {}", p.name)))?;
        if t.shape() != p.shape.as_slice() {
            return Err(Error::Dimension(format!(
                "{}: checkpoint shape {:?}, network expects {:?}",
                p.name,
                t.shape(),
                p.shape
            )));
        }
        params.push(t.clone());
    }
    Ok(NetState { params })
}

pub fn prob_entries(s: &ProbVector) -> Result<Vec<(String, Tensor)>> {
    let layout = s.layout();
    layout
        .names
        .iter()
        .zip(&layout.shapes)
        .zip(s.segments())
        .map(|((name, shape), seg)| Ok((name.clone(), Tensor::new(shape.clone(), seg.clone())?)))
        .collect()
}

pub fn probs_from_entries(entries: Vec<(String, Tensor)>) -> Result<ProbVector> {
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    let mut segments = Vec::new();
    for (name, t) in entries {
        names.push(name);
        shapes.push(t.shape().to_vec());
        segments.push(t.into_data());
    }
    ProbVector::new(Layout { names, shapes }, segments)
}

pub fn save_state(path: impl AsRef<Path>, spec: &NetSpec, state: &NetState) -> Result<()> {
    fs::write(path, encode_tensors(&state_entries(spec, state))?)?;
    Ok(())
}

pub fn load_state(path: impl AsRef<Path>, spec: &NetSpec) -> Result<NetState> {
    state_from_entries(spec, decode_tensors(&fs::read(path)?)?)
}

pub fn save_probs(path: impl AsRef<Path>, s: &ProbVector) -> Result<()> {
    fs::write(path, encode_tensors(&prob_entries(s)?)?)?;
    Ok(())
}

pub fn load_probs(path: impl AsRef<Path>) -> Result<ProbVector> {
    probs_from_entries(decode_tensors(&fs::read(path)?)?)
}

/// Serializes a hard mask as `PMSK`.
pub fn encode_mask(layout: &Layout, mask: &MaskSample) -> Result<Vec<u8>> {
    if mask.values.len() != layout.names.len()
        || mask.values.iter().map(Vec::len).ne(layout.lens())
    {
        return Err(Error::Dimension("mask does not match layout".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&MASK_VERSION.to_le_bytes());
    out.extend_from_slice(&count_u32(layout.names.len())?);
    for ((name, shape), values) in layout.names.iter().zip(&layout.shapes).zip(&mask.values) {
        put_header(&mut out, name, shape)?;
        for chunk in values.chunks(8) {
            let mut byte = 0u8;
            for (bit, &v) in chunk.iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Input(format!("{name}: mask value {v} is not binary")));
                }
                if v == 1.0 {
                    byte |= 0x80 >> bit;
                }
            }
            out.push(byte);
        }
    }
    Ok(out)
}

pub fn decode_mask(bytes: &[u8]) -> Result<(Layout, MaskSample)> {
    let mut r = Reader::new(bytes, "mask");
    r.magic(MASK_MAGIC)?;
    let version = r.u16()?;
    if version != MASK_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    let mut values = Vec::new();
    for _ in 0..count {
        let (name, dims) = r.header()?;
        let numel: usize = dims.iter().product();
        let packed = r.take(numel.div_ceil(8))?;
        let bits: Vec<f64> = (0..numel)
            .map(|i| if packed[i / 8] & (0x80 >> (i % 8)) != 0 { 1.0 } else { 0.0 })
            .collect();
        names.push(name);
        shapes.push(dims);
        values.push(bits);
    }
    r.finish()?;
    Ok((
        Layout { names, shapes },
        MaskSample {
            values,
            kind: MaskKind::Hard,
        },
    ))
}

pub fn save_mask(path: impl AsRef<Path>, layout: &Layout, mask: &MaskSample) -> Result<()> {
    fs::write(path, encode_mask(layout, mask)?)?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<(Layout, MaskSample)> {
    decode_mask(&fs::read(path)?)
}

/// Orders a loaded mask to match `spec`, checking names and shapes.
pub fn mask_for_spec(spec: &NetSpec, layout: &Layout, mask: MaskSample) -> Result<MaskSample> {
    let want = Layout::from_spec(spec);
    let mut values = Vec::with_capacity(want.names.len());
    if layout.names.len() != want.names.len() {
        return Err(Error::Dimension(format!(
            "mask has {} tensors, network has {} maskable tensors",
            layout.names.len(),
            want.names.len()
        )));
    }
    for (name, shape) in want.names.iter().zip(&want.shapes) {
        let idx = layout
            .index_of(name)
            .ok_or_else(|| Error::Dimension(format!("mask lacks tensor {name}")))?;
        if &layout.shapes[idx] != shape {
            return Err(Error::Dimension(format!(
                "{name}: mask shape {:?}, network expects {shape:?}",
                layout.shapes[idx]
            )));
        }
        values.push(mask.values[idx].clone());
    }
    Ok(MaskSample {
        values,
        kind: mask.kind,
    })
}
