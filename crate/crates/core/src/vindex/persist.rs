// SPDX-License-Identifier: Apache-2.0

//! Binary index files.
//!
//! ```text
//! offset  size          field
//! 0       4             magic "BKHV"
//! 4       4             version, u32 LE (= 1)
//! 8       4             dim, u32 LE
//! 12      8             count, u64 LE
//! 20      count*dim*4   vectors, f32 LE, canonical entry order
//! ..      4             CRC-32 (IEEE) of the vector block, u32 LE
//! ```
//!
//! Labels live in a sidecar `<path>.meta.jsonl`, one `{record_id, coast}`
//! object per entry in the same order.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::VectorIndex;
use crate::error::{Error, Result};
use crate::types::Coast;

pub const INDEX_MAGIC: [u8; 4] = *b"BKHV";
pub const INDEX_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Serialize, Deserialize)]
struct MetaLine {
    record_id: String,
    coast: Coast,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.jsonl");
    PathBuf::from(s)
}

pub fn save_index(index: &VectorIndex, path: &Path) -> Result<()> {
    let data = index.raw_data();
    let mut block = Vec::with_capacity(data.len() * 4);
    for v in data {
        block.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&block);

    let mut bytes = Vec::with_capacity(HEADER_LEN + block.len() + 4);
    bytes.extend_from_slice(&INDEX_MAGIC);
    bytes.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    bytes.extend_from_slice(&(index.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&block);
    bytes.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;

    let meta = sidecar_path(path);
    let file = File::create(&meta).map_err(|e| Error::io(&meta, e))?;
    let mut w = BufWriter::new(file);
    for e in index.entries() {
        let line = MetaLine {
            record_id: e.record_id.to_string(),
            coast: e.coast,
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::io(&meta, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(&meta, e))?;
    }
    w.flush().map_err(|e| Error::io(&meta, e))
}

pub fn load_index(path: &Path) -> Result<VectorIndex> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(Error::CorruptPayload(format!(
            "file is only {} bytes",
            bytes.len()
        )));
    }
    if bytes[..4] != INDEX_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptPayload("truncated header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != INDEX_VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let dim = u32_at(8) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let block_len = (count as u128) * (dim as u128) * 4;
    let expected = HEADER_LEN as u128 + block_len + 4;
    if bytes.len() as u128 != expected {
        return Err(Error::CorruptPayload(format!(
            "expected {expected} bytes for {count} x {dim} vectors, found {}",
            bytes.len()
        )));
    }
    let count = count as usize;
    let block_end = HEADER_LEN + block_len as usize;
    let block = &bytes[HEADER_LEN..block_end];
    if crc32fast::hash(block) != u32_at(block_end) {
        return Err(Error::CorruptPayload(
            "vector block checksum mismatch".into(),
        ));
    }
    if dim == 0 || count == 0 {
        return Err(Error::CorruptPayload("index holds no vectors".into()));
    }
    let data: Vec<f32> = block
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();

    let meta = sidecar_path(path);
    let file = File::open(&meta).map_err(|e| Error::io(&meta, e))?;
    let mut ids = Vec::with_capacity(count);
    let mut coasts = Vec::with_capacity(count);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&meta, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let m: MetaLine = serde_json::from_str(&line)
            .map_err(|e| Error::CorruptPayload(format!("{}:{}: {e}", meta.display(), i + 1)))?;
        if let Some(prev) = ids.last() {
            if *prev >= m.record_id {
                return Err(Error::CorruptPayload(format!(
                    "{}:{}: record ids out of canonical order",
                    meta.display(),
                    i + 1
                )));
            }
        }
        ids.push(m.record_id);
        coasts.push(m.coast);
    }
    if ids.len() != count {
        return Err(Error::CorruptPayload(format!(
            "sidecar lists {} entries, index holds {count}",
            ids.len()
        )));
    }
    VectorIndex::from_sorted_parts(dim, ids, coasts, data)
        .map_err(|e| Error::CorruptPayload(e.to_string()))
}
