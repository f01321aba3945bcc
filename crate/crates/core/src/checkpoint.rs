//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    b"GLAP"
//! version  u32 (= 1)
//! layers   u32   number of encoder layers
//! count    u32   number of matrices (= layers + 8)
//! count × { rows u64, cols u64, rows·cols × f64 (row-major) }
//! ```
//!
//! Matrices follow [`ModelParams::matrices`] order.

use std::fs;
use std::path::Path;

use crate::error::{GlaError, Result};
use crate::matrix::Matrix;
use crate::model::ModelParams;

pub const MAGIC: &[u8; 4] = b"GLAP";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mats = params.matrices();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.encoder.len() as u32).to_le_bytes());
    out.extend_from_slice(&(mats.len() as u32).to_le_bytes());
    for m in mats {
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            GlaError::Checkpoint(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(GlaError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(GlaError::Checkpoint(format!("unsupported version {version}")));
    }
    let layers = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut mats = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| GlaError::Checkpoint("matrix size overflow".into()))?;
        let bytes = r.take(len.checked_mul(8).ok_or_else(|| GlaError::Checkpoint("matrix size overflow".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        mats.push(Matrix::new(rows, cols, data)?);
    }
    if r.pos != buf.len() {
        return Err(GlaError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    ModelParams::from_matrices(layers, mats)
}

pub fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng;

    #[test]
    fn round_trip_and_corruption() {
        let cfg = ModelConfig { layers: 2, hidden: 4, proj_dim: 3 };
        let params = ModelParams::init(5, 2, &cfg, &mut rng::stream(1, "t", &[])).unwrap();
        let bytes = encode_checkpoint(&params);
        assert_eq!(&bytes[..4], b"GLAP");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), params);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
