//! Binary checkpoints.
//!
//! Layout (little-endian): `BMCCKPT1`, `version: u32`, `M: u32`,
//! `d_tok: u32`, `M * d_tok` `f32` context values, `epoch: u32`,
//! `rng_len: u32` followed by the RNG state, then `prov_len: u32` followed by
//! a UTF-8 provenance string (config digest and seed).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::ContextVectors;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::trainer::TrainState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BMCCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const RNG_STATE_LEN: usize = 32 + 8 + 16;

fn encode_rng(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(RNG_STATE_LEN);
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

fn decode_rng(bytes: &[u8]) -> Result<ChaCha8Rng> {
    if bytes.len() != RNG_STATE_LEN {
        return Err(Error::Data(format!(
            "rng state has {} bytes, expected {RNG_STATE_LEN}",
            bytes.len()
        )));
    }
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&bytes[..32]);
    let stream = u64::from_le_bytes(bytes[32..40].try_into().expect("8 bytes"));
    let word_pos = u128::from_le_bytes(bytes[40..56].try_into().expect("16 bytes"));
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(rng)
}

pub fn encode_checkpoint(state: &TrainState, provenance: &str) -> Result<Vec<u8>> {
    let ctx = state.ctx.vectors();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ctx.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(ctx.cols() as u32).to_le_bytes());
    for &v in ctx.as_slice() {
        let single = v as f32;
        if f64::from(single) != v {
            return Err(Error::Numeric(format!("context value {v} is not representable as f32")));
        }
        buf.extend_from_slice(&single.to_le_bytes());
    }
    buf.extend_from_slice(&(state.epoch as u32).to_le_bytes());
    let rng = encode_rng(&state.rng);
    buf.extend_from_slice(&(rng.len() as u32).to_le_bytes());
    buf.extend_from_slice(&rng);
    buf.extend_from_slice(&(provenance.len() as u32).to_le_bytes());
    buf.extend_from_slice(provenance.as_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// A decoded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: TrainState,
    pub provenance: String,
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path, init_text: &str) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(CHECKPOINT_MAGIC.len()).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version(version));
    }
    let m = r.u32()? as usize;
    let width = r.u32()? as usize;
    let mut data = Vec::with_capacity(m * width);
    for chunk in r.take(m * width * 4)?.chunks_exact(4) {
        data.push(f64::from(f32::from_le_bytes(chunk.try_into().expect("4 bytes"))));
    }
    let epoch = r.u32()? as usize;
    let rng_len = r.u32()? as usize;
    let rng = decode_rng(r.take(rng_len)?)?;
    let prov_len = r.u32()? as usize;
    let provenance = String::from_utf8(r.take(prov_len)?.to_vec())
        .map_err(|_| Error::Data("checkpoint provenance is not UTF-8".into()))?;
    if r.pos != bytes.len() {
        return Err(Error::Data(format!(
            "{}: {} trailing bytes after checkpoint",
            path.display(),
            bytes.len() - r.pos
        )));
    }
    let ctx = ContextVectors::new(Matrix::from_vec(m, width, data)?, init_text)?;
    Ok(Checkpoint {
        state: TrainState { ctx, epoch, rng },
        provenance,
    })
}

pub fn save_checkpoint(state: &TrainState, provenance: &str, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(state, provenance)?).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and checks that its context has `context_length`
/// rows of width `token_width`.
pub fn load_checkpoint(path: &Path, context_length: usize, token_width: usize, init_text: &str) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = decode_checkpoint(&bytes, path, init_text)?;
    let ctx = &ckpt.state.ctx;
    if ctx.len() != context_length || ctx.token_width() != token_width {
        return Err(Error::Shape(format!(
            "checkpoint context is {}x{}, expected {context_length}x{token_width}",
            ctx.len(),
            ctx.token_width()
        )));
    }
    Ok(ckpt)
}
