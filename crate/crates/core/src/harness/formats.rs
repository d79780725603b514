//! Binary feature, embedding and weight files. All integers and floats are
//! little-endian; floats are 32-bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::feature::{FeatureKind, FeatureMatrix, FeatureSet};
use crate::nn::Params;

pub const FORMAT_VERSION: u16 = 1;
const FEATURE_MAGIC: &[u8; 4] = b"VIFE";
const EMBEDDING_MAGIC: &[u8; 4] = b"VIEM";
const WEIGHTS_MAGIC: &[u8; 4] = b"VIWT";

/// Write `bytes` to a temporary sibling, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::format(self.path, "payload size overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.path, format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        let v = self.u16()?;
        if v != FORMAT_VERSION {
            return Err(Error::format(self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn extend_f32(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} {n} does not fit in 32 bits")))
}

pub fn encode_feature(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(15 + m.values.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(m.kind.tag());
    out.extend_from_slice(&u32_len(m.rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&u32_len(m.cols, "cols")?.to_le_bytes());
    extend_f32(&mut out, m.values.iter().copied());
    Ok(out)
}

pub fn write_feature(path: &Path, m: &FeatureMatrix) -> Result<()> {
    write_atomic(path, &encode_feature(m)?)
}

pub fn read_feature(path: &Path) -> Result<FeatureMatrix> {
    let bytes = read_file(path)?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    r.header(FEATURE_MAGIC)?;
    let tag = r.u8()?;
    let kind = FeatureKind::from_tag(tag).ok_or_else(|| Error::format(path, format!("unknown feature tag {tag}")))?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let expected = rows as u64 * cols as u64 * 4;
    let remaining = (bytes.len() - r.pos) as u64;
    if remaining != expected {
        return Err(Error::format(path, format!("payload is {remaining} bytes, header implies {expected}")));
    }
    let values = r.f32s(rows * cols)?;
    r.finish()?;
    FeatureMatrix::new(kind, rows, cols, values)
}

/// Per-track embeddings as stored on disk: one block per feature in Me, Ha,
/// Rh, Ly order; absent blocks are zero-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub dim: usize,
    pub parts: [Option<Vec<f32>>; 4],
}

impl EmbeddingRecord {
    pub fn new(dim: usize) -> Self {
        EmbeddingRecord {
            dim,
            parts: Default::default(),
        }
    }

    pub fn present(&self) -> FeatureSet {
        FeatureKind::ALL.into_iter().filter(|k| self.parts[k.index()].is_some()).collect()
    }
}

pub fn encode_embedding(e: &EmbeddingRecord) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(11 + 16 * e.dim);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(e.present().bits());
    out.extend_from_slice(&u32_len(e.dim, "dimension")?.to_le_bytes());
    for p in &e.parts {
        match p {
            Some(v) if v.len() == e.dim => extend_f32(&mut out, v.iter().copied()),
            Some(v) => return Err(Error::Shape(format!("embedding block of {} values, expected {}", v.len(), e.dim))),
            None => extend_f32(&mut out, std::iter::repeat_n(0.0, e.dim)),
        }
    }
    Ok(out)
}

pub fn write_embedding(path: &Path, e: &EmbeddingRecord) -> Result<()> {
    write_atomic(path, &encode_embedding(e)?)
}

pub fn read_embedding(path: &Path) -> Result<EmbeddingRecord> {
    let bytes = read_file(path)?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    r.header(EMBEDDING_MAGIC)?;
    let mask = r.u8()?;
    if mask & !0x0f != 0 {
        return Err(Error::format(path, format!("presence mask {mask:#04x} has unknown bits")));
    }
    let present = FeatureSet::from_bits(mask);
    let dim = r.u32()? as usize;
    let mut rec = EmbeddingRecord::new(dim);
    for k in FeatureKind::ALL {
        let block = r.f32s(dim)?;
        if present.contains(k) {
            rec.parts[k.index()] = Some(block);
        }
    }
    r.finish()?;
    Ok(rec)
}

/// Named tensors plus a free-form `key=value;...` metadata string.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub params: Params,
}

pub fn encode_checkpoint(c: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_len(c.metadata.len(), "metadata length")?.to_le_bytes());
    out.extend_from_slice(c.metadata.as_bytes());
    out.extend_from_slice(&u32_len(c.params.len(), "tensor count")?.to_le_bytes());
    for p in &c.params.tensors {
        let name = p.name.as_bytes();
        let nlen = u16::try_from(name.len()).map_err(|_| Error::InvalidArgument(format!("tensor name {} too long", p.name)))?;
        out.extend_from_slice(&nlen.to_le_bytes());
        out.extend_from_slice(name);
        let ndim = u8::try_from(p.shape.len()).map_err(|_| Error::InvalidArgument(format!("tensor {} has too many dims", p.name)))?;
        out.push(ndim);
        for &d in &p.shape {
            out.extend_from_slice(&u32_len(d, "tensor dimension")?.to_le_bytes());
        }
        extend_f32(&mut out, p.data.iter().map(|&v| v as f32));
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(c)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_file(path)?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    r.header(WEIGHTS_MAGIC)?;
    let mlen = r.u32()? as usize;
    let metadata = String::from_utf8(r.take(mlen)?.to_vec()).map_err(|_| Error::format(path, "metadata is not UTF-8"))?;
    let count = r.u32()? as usize;
    let mut params = Params::default();
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::format(path, "tensor too large"))?;
        let data = r.f32s(n)?.into_iter().map(f64::from).collect();
        params.push(name, shape, data);
    }
    r.finish()?;
    Ok(Checkpoint { metadata, params })
}

/// Parse `key=value;key=value` metadata.
pub fn metadata_get<'a>(metadata: &'a str, key: &str) -> Option<&'a str> {
    metadata.split(';').find_map(|kv| kv.split_once('=').filter(|(k, _)| *k == key).map(|(_, v)| v))
}
