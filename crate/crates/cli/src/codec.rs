//! Binary checkpoint (`AMTL`) and compressed store (`AMTS`) files.
//!
//! All integers and reals are little-endian.
//!
//! Checkpoint: magic, version `u32`, CRC32 of the payload `u32`, payload.
//! The payload is a `u64` section count followed by sections of
//! `u32` name length, UTF-8 name, `u32` rank, `rank × u64` dims and the
//! `f64` values. The `config` section holds the UTF-8 config text instead
//! of reals; its shape is `[byte length]`.
//!
//! Store: magic, version `u32`, `u32` name length, name, `u32` D, `u64` row
//! count, then per row `u64` id, `u16` k and `k+1` `f64` values, closed by a
//! CRC32 of everything before it.

use std::fs;
use std::path::Path;

use amtl_core::checkpoint::CONFIG_SECTION;
use amtl_core::{Checkpoint, CompressedStore, ModelConfig, ParamSection};

use crate::error::{CliError, FormatError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AMTL";
pub const STORE_MAGIC: [u8; 4] = *b"AMTS";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(FormatError::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], FormatError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        self.array(what).map(u16::from_le_bytes)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        self.array(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        self.array(what).map(u64::from_le_bytes)
    }

    fn f64s(&mut self, n: u64, what: &'static str) -> Result<Vec<f64>, FormatError> {
        let bytes = usize::try_from(n)
            .ok()
            .and_then(|n| n.checked_mul(8))
            .ok_or(FormatError::Truncated(what))?;
        let raw = self.take(bytes, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn string(&mut self, what: &'static str) -> Result<String, FormatError> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|e| FormatError::Invalid { what, detail: e.to_string() })
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn check_magic(r: &mut Reader<'_>, expected: [u8; 4]) -> Result<(), FormatError> {
    let found = r.array::<4>("magic")?;
    if found != expected {
        return Err(FormatError::Magic { expected, found });
    }
    match r.u32("version")? {
        FORMAT_VERSION => Ok(()),
        v => Err(FormatError::Version(v)),
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&(ckpt.sections.len() as u64 + 1).to_le_bytes());
    let config = ckpt.config.to_text();
    put_str(&mut payload, CONFIG_SECTION);
    payload.extend_from_slice(&1u32.to_le_bytes());
    payload.extend_from_slice(&(config.len() as u64).to_le_bytes());
    payload.extend_from_slice(config.as_bytes());
    for s in &ckpt.sections {
        put_str(&mut payload, &s.name);
        payload.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
        for d in &s.shape {
            payload.extend_from_slice(&d.to_le_bytes());
        }
        for v in &s.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    check_magic(&mut r, CHECKPOINT_MAGIC)?;
    let stored = r.u32("checksum")?;
    let computed = crc32fast::hash(&bytes[r.pos..]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    let count = r.u64("section count")?;
    let mut config = None;
    let mut sections = Vec::new();
    for _ in 0..count {
        let name = r.string("section name")?;
        let rank = r.u32("section rank")?;
        let shape = (0..rank).map(|_| r.u64("section shape")).collect::<Result<Vec<_>, _>>()?;
        if name == CONFIG_SECTION {
            let len = match shape.as_slice() {
                [len] => usize::try_from(*len).map_err(|_| FormatError::Truncated("config"))?,
                _ => return Err(invalid("config section", format!("shape {shape:?}")).into()),
            };
            let text = std::str::from_utf8(r.take(len, "config")?)
                .map_err(|e| invalid("config section", e.to_string()))?;
            config = Some(ModelConfig::from_text(text)?);
            continue;
        }
        let n = shape
            .iter()
            .try_fold(1u64, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| invalid("section shape", format!("{shape:?} overflows")))?;
        let values = r.f64s(n, "section values")?;
        if sections.iter().any(|s: &ParamSection| s.name == name) {
            return Err(invalid("section name", format!("`{name}` repeated")).into());
        }
        sections.push(ParamSection::new(name, shape, values));
    }
    if r.remaining() != 0 {
        return Err(FormatError::Trailing(r.remaining()).into());
    }
    let config = config.ok_or_else(|| invalid("checkpoint", "no config section".into()))?;
    Ok(Checkpoint { config, sections })
}

fn invalid(what: &'static str, detail: String) -> FormatError {
    FormatError::Invalid { what, detail }
}

pub fn encode_store(store: &CompressedStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + store.field_name().len() + store.value_words() * 8 + store.len() * 10);
    out.extend_from_slice(&STORE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_str(&mut out, store.field_name());
    out.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (id, row) in store.rows() {
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&row.k.to_le_bytes());
        for v in &row.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_store(bytes: &[u8]) -> Result<CompressedStore> {
    let body_len = bytes.len().checked_sub(4).ok_or(FormatError::Truncated("store"))?;
    let mut r = Reader::new(&bytes[..body_len]);
    check_magic(&mut r, STORE_MAGIC)?;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    let name = r.string("field name")?;
    let dim = r.u32("dimension")? as usize;
    let rows = r.u64("row count")?;
    let mut store = CompressedStore::new(name, dim)?;
    let mut last = None;
    for _ in 0..rows {
        let id = r.u64("row id")?;
        if last.is_some_and(|prev| prev >= id) {
            return Err(invalid("row order", format!("id {id} out of order")).into());
        }
        last = Some(id);
        let k = r.u16("row k")?;
        let values = r.f64s(k as u64 + 1, "row values")?;
        store.insert(id, k, values)?;
    }
    if r.remaining() != 0 {
        return Err(FormatError::Trailing(r.remaining()).into());
    }
    Ok(store)
}

/// Bytes a store file spends on the fixed header and checksum.
pub fn store_overhead(store: &CompressedStore) -> usize {
    4 + 4 + 4 + store.field_name().len() + 4 + 8 + 4
}

/// Bytes a store file spends per row beside the values (`id` and `k`).
pub const STORE_ROW_OVERHEAD: usize = 8 + 2;

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| CliError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path).map_err(|e| CliError::io(path, e))?)
}

pub fn write_store(path: &Path, store: &CompressedStore) -> Result<()> {
    fs::write(path, encode_store(store)).map_err(|e| CliError::io(path, e))
}

pub fn read_store(path: &Path) -> Result<CompressedStore> {
    decode_store(&fs::read(path).map_err(|e| CliError::io(path, e))?)
}
