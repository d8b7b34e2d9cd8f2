//! Binary embedding cache.
//!
//! Layout: the 7 ASCII bytes `BMCEMB1`, then `row_count: u32` and `dim: u32`
//! (little-endian), then `row_count * dim` little-endian `f32` values in
//! row-major order. Values are held as `f64` in memory and rounded to `f32`
//! when written, so a round trip is bit-exact for any matrix whose entries
//! are already representable as `f32` (everything read from a cache is).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::types::embedding::{Axis, EmbeddingMatrix};

pub const CACHE_MAGIC: &[u8; 7] = b"BMCEMB1";
pub const CACHE_HEADER_LEN: usize = CACHE_MAGIC.len() + 8;

/// Serializes a matrix into the cache byte layout.
pub fn encode_embedding_cache(matrix: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(matrix.len()).map_err(|_| Error::Shape(format!("{} rows exceed u32", matrix.len())))?;
    let dim = u32::try_from(matrix.dim()).map_err(|_| Error::Shape(format!("dim {} exceeds u32", matrix.dim())))?;
    let mut buf = Vec::with_capacity(CACHE_HEADER_LEN + matrix.as_slice().len() * 4);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    for (row, values) in matrix.iter_rows().enumerate() {
        for (col, &v) in values.iter().enumerate() {
            let single = v as f32;
            if !single.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            buf.extend_from_slice(&single.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Parses cache bytes. `path` only labels errors.
pub fn decode_embedding_cache(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    if bytes.len() < CACHE_MAGIC.len() || &bytes[..CACHE_MAGIC.len()] != CACHE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < CACHE_HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: CACHE_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let rows = read_u32(&bytes[7..11]) as usize;
    let dim = read_u32(&bytes[11..15]) as usize;
    let expected = CACHE_HEADER_LEN + rows * dim * 4;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(rows * dim);
    for (idx, chunk) in bytes[CACHE_HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: idx / dim,
                col: idx % dim,
            });
        }
        data.push(f64::from(v));
    }
    // The cache format does not record the axis; callers re-tag as needed.
    EmbeddingMatrix::new(Axis::PerImage, Matrix::from_vec(rows, dim, data)?)
}

pub fn write_embedding_cache(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let bytes = encode_embedding_cache(matrix)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embedding_cache(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding_cache(&bytes, path)
}

fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// `item_id -> row` index paired with an embedding cache.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheIndex {
    ids: Vec<String>,
    rows: HashMap<String, usize>,
}

impl CacheIndex {
    pub fn from_ids<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut index = Self::default();
        for (row, id) in ids.into_iter().enumerate() {
            index.insert(id.into(), row)?;
        }
        Ok(index)
    }

    fn insert(&mut self, id: String, row: usize) -> Result<()> {
        if self.rows.insert(id.clone(), row).is_some() {
            return Err(Error::Data(format!("duplicate item id `{id}` in cache index")));
        }
        self.ids.push(id);
        Ok(())
    }

    pub fn row_of(&self, id: &str) -> Result<usize> {
        self.rows
            .get(id)
            .copied()
            .ok_or_else(|| Error::MissingItem(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Parses `item_id<TAB>row_index` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut index = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, row) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("cache index line {}: expected two fields", n + 1)))?;
            let row: usize = row
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("cache index line {}: bad row index `{row}`", n + 1)))?;
            index.insert(id.to_string(), row)?;
        }
        Ok(index)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for id in &self.ids {
            out.push_str(id);
            out.push('\t');
            out.push_str(&self.rows[id].to_string());
            out.push('\n');
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}
