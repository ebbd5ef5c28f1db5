//! Append-only binary embedding cache.
//!
//! Layout: magic `EMBC1`, `dim: u32`, `count: u64`, then `count` entries of
//! `id_len: u32`, `id` (UTF-8), `dim × f32`. All integers and floats are
//! little-endian. Entries are appended and the header count is rewritten on
//! every commit; a torn trailing entry is ignored on read and cut off when
//! the cache is reopened for appending.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use embsteal_core::teacher::EmbeddingVector;
use serde::Serialize;

use crate::error::{AppError, Result};
use crate::experiment::VectorMap;

pub const MAGIC: &[u8; 5] = b"EMBC1";
const HEADER_LEN: u64 = 5 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Cache {
    pub dim: usize,
    /// Entries in file order.
    pub entries: Vec<(String, EmbeddingVector)>,
    /// Bytes past the last complete entry.
    pub torn_bytes: u64,
    valid_len: u64,
}

impl Cache {
    pub fn to_map(&self) -> VectorMap {
        self.entries.iter().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> AppError {
    AppError::Data(format!("{}: {msg}", path.display()))
}

/// Reads every complete entry.
pub fn read_cache(path: &Path) -> Result<Cache> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(AppError::io(path))?;
    parse_cache(&bytes).map_err(|m| data_err(path, m))
}

fn parse_cache(bytes: &[u8]) -> std::result::Result<Cache, String> {
    if bytes.len() < HEADER_LEN as usize || &bytes[..5] != MAGIC {
        return Err("not an EMBC1 cache".into());
    }
    let dim = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err("cache dimension is 0".into());
    }
    let mut pos = HEADER_LEN as usize;
    let mut entries = Vec::new();
    let mut seen = BTreeMap::new();
    while let Some(len_bytes) = bytes.get(pos..pos + 4) {
        let id_len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        let end = pos + 4 + id_len + 4 * dim;
        if end > bytes.len() {
            break;
        }
        let id = std::str::from_utf8(&bytes[pos + 4..pos + 4 + id_len])
            .map_err(|_| format!("entry at byte {pos} has a non-UTF-8 id"))?
            .to_string();
        let values: Vec<f64> = bytes[pos + 4 + id_len..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let v = EmbeddingVector::from_unit(values).map_err(|e| format!("entry {id:?}: {e}"))?;
        if seen.insert(id.clone(), ()).is_some() {
            return Err(format!("duplicate id {id:?}"));
        }
        entries.push((id, v));
        pos = end;
    }
    Ok(Cache {
        dim,
        entries,
        torn_bytes: (bytes.len() - pos) as u64,
        valid_len: pos as u64,
    })
}

/// Single appender for a cache file.
pub struct CacheWriter {
    path: PathBuf,
    file: BufWriter<File>,
    dim: usize,
    count: u64,
}

impl CacheWriter {
    /// Opens `path` for appending, creating it if needed, and returns the
    /// entries already committed. A torn tail is truncated.
    pub fn open(path: &Path, dim: usize) -> Result<(Self, Cache)> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(AppError::io(dir))?;
        }
        let existing = if path.exists() {
            let c = read_cache(path)?;
            if c.dim != dim {
                return Err(data_err(path, format!("cache holds {}-dim vectors, expected {dim}", c.dim)));
            }
            c
        } else {
            let mut f = File::create(path).map_err(AppError::io(path))?;
            f.write_all(MAGIC)
                .and_then(|_| f.write_all(&(dim as u32).to_le_bytes()))
                .and_then(|_| f.write_all(&0u64.to_le_bytes()))
                .and_then(|_| f.sync_all())
                .map_err(AppError::io(path))?;
            Cache {
                dim,
                entries: Vec::new(),
                torn_bytes: 0,
                valid_len: HEADER_LEN,
            }
        };
        let mut file = OpenOptions::new().read(true).write(true).open(path).map_err(AppError::io(path))?;
        file.set_len(existing.valid_len).map_err(AppError::io(path))?;
        file.seek(SeekFrom::End(0)).map_err(AppError::io(path))?;
        let mut w = Self {
            path: path.to_path_buf(),
            file: BufWriter::new(file),
            dim,
            count: existing.entries.len() as u64,
        };
        w.commit()?;
        Ok((w, existing))
    }

    pub fn append(&mut self, id: &str, v: &EmbeddingVector) -> Result<()> {
        if v.dim() != self.dim {
            return Err(data_err(&self.path, format!("vector for {id:?} has dim {}, expected {}", v.dim(), self.dim)));
        }
        let mut buf = Vec::with_capacity(4 + id.len() + 4 * self.dim);
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for &x in v.values() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        self.file.write_all(&buf).map_err(AppError::io(&self.path))?;
        self.count += 1;
        Ok(())
    }

    /// Flushes appended entries to disk and then updates the header count.
    pub fn commit(&mut self) -> Result<()> {
        let io = AppError::io(&self.path);
        (|| -> std::io::Result<()> {
            self.file.flush()?;
            let f = self.file.get_mut();
            f.sync_data()?;
            let end = f.stream_position()?;
            f.seek(SeekFrom::Start(9))?;
            f.write_all(&self.count.to_le_bytes())?;
            f.sync_data()?;
            f.seek(SeekFrom::Start(end))?;
            Ok(())
        })()
        .map_err(io)
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

#[derive(Serialize)]
struct JsonLine<'a> {
    id: &'a str,
    vector: Vec<f32>,
}

/// One JSON object per entry: `{"id": ..., "vector": [...]}`.
pub fn export_jsonl(cache: &Cache, out: &mut impl Write) -> Result<()> {
    for (id, v) in &cache.entries {
        let line = JsonLine {
            id,
            vector: v.values().iter().map(|&x| x as f32).collect(),
        };
        serde_json::to_writer(&mut *out, &line).map_err(|e| AppError::Data(e.to_string()))?;
        out.write_all(b"\n").map_err(AppError::io("<jsonl>"))?;
    }
    Ok(())
}
