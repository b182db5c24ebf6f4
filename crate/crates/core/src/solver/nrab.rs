//! NRAB system dumps: `"NRAB"`, little-endian `u32 nblocks`, `u32 block_dim`
//! (= 6), `u32 nnz_blocks`, then `nnz_blocks x (u32 row, u32 col, 36 f64
//! row-major)` for the lower triangle including the diagonal, then `n` f64
//! for `b`. Blocks are written in row-major canonical order; the reader
//! requires that order so every accepted file re-encodes byte-identically.

use std::path::Path;

use super::factor::Reader;
use super::{Block, BlockSparseMatrix, BLOCK_DIM};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"NRAB";
const BLOCK_BYTES: usize = 8 + 8 * BLOCK_DIM * BLOCK_DIM;

pub fn system_to_bytes(a: &BlockSparseMatrix, b: &[f64]) -> Result<Vec<u8>> {
    if b.len() != a.n() {
        return Err(Error::DimensionMismatch { expected: a.n(), got: b.len() });
    }
    let nnz = a.nnz_lower_blocks();
    let mut out = Vec::with_capacity(16 + nnz * BLOCK_BYTES + 8 * b.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(a.nblocks() as u32).to_le_bytes());
    out.extend_from_slice(&(BLOCK_DIM as u32).to_le_bytes());
    out.extend_from_slice(&(nnz as u32).to_le_bytes());
    for (r, c, blk) in a.lower_blocks() {
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        for i in 0..BLOCK_DIM {
            for j in 0..BLOCK_DIM {
                out.extend_from_slice(&blk[(i, j)].to_le_bytes());
            }
        }
    }
    for v in b {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn system_from_bytes(bytes: &[u8]) -> Result<(BlockSparseMatrix, Vec<f64>)> {
    let mut rd = Reader { bytes, pos: 0 };
    if rd.take(4)? != MAGIC {
        return Err(Error::format("missing NRAB header"));
    }
    let nblocks = rd.u32()? as usize;
    let dim = rd.u32()? as usize;
    if dim != BLOCK_DIM {
        return Err(Error::format(format!("block_dim {dim}, expected {BLOCK_DIM}")));
    }
    let nnz = rd.u32()? as usize;
    let body = nnz
        .checked_mul(BLOCK_BYTES)
        .and_then(|s| nblocks.checked_mul(8 * BLOCK_DIM).and_then(|t| s.checked_add(t)));
    rd.expect_remaining(body)?;
    let mut entries = Vec::with_capacity(nnz);
    let mut prev: Option<(usize, usize)> = None;
    let mut diag_seen = 0usize;
    for _ in 0..nnz {
        let r = rd.u32()? as usize;
        let c = rd.u32()? as usize;
        if r >= nblocks || c > r {
            return Err(Error::format(format!("block ({r}, {c}) outside the lower triangle")));
        }
        if prev.is_some_and(|p| p >= (r, c)) {
            return Err(Error::format(format!("block ({r}, {c}) out of canonical order")));
        }
        prev = Some((r, c));
        if r == c {
            diag_seen += 1;
        }
        let mut blk = Block::zeros();
        for i in 0..BLOCK_DIM {
            for j in 0..BLOCK_DIM {
                blk[(i, j)] = rd.f64()?;
            }
        }
        entries.push((r, c, blk));
    }
    if diag_seen != nblocks {
        return Err(Error::format(format!("{diag_seen} of {nblocks} diagonal blocks present")));
    }
    let b = (0..nblocks * BLOCK_DIM).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
    let a = BlockSparseMatrix::from_lower(nblocks, entries).map_err(|e| Error::format(e.to_string()))?;
    Ok((a, b))
}

pub fn dump_system(a: &BlockSparseMatrix, b: &[f64], path: &Path) -> Result<()> {
    std::fs::write(path, system_to_bytes(a, b)?).map_err(|e| Error::io(path, e))
}

pub fn load_system(path: &Path) -> Result<(BlockSparseMatrix, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    system_from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}
