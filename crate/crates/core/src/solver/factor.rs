//! Externally supplied lower-triangular factors `L`, applied as the operator
//! `M^-1 = L L^T + D` with `D_ii = max(0, tau - L_ii^2)` and `tau` =
//! [`DIAG_CLAMP`]. The diagonal of `M^-1` is then at least `tau`, and every
//! zero pivot of `L` gets a strictly positive lift, so `M^-1` is definite.
//!
//! NRPC layout (little-endian): magic `NRPC`, `u8` kind (0 dense, 1 sparse,
//! 2 block-diagonal), `u32 n`, then
//! - dense: `n(n+1)/2` f64, row-major lower triangle;
//! - sparse: `u32 nnz`, then `nnz x (u32 row, u32 col, f64)` with `row >= col`;
//! - block-diagonal: `u32 nblocks`, then 21 f64 per block (row-major lower
//!   triangle of a 6x6 block).

use std::path::Path;

use nalgebra::DMatrix;

use super::{BlockSparseMatrix, BLOCK_DIM};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"NRPC";

/// Lower bound enforced on the diagonal of `M^-1`.
pub const DIAG_CLAMP: f64 = 1e-6;

/// Packed lower-triangle entries of one 6x6 block.
const TRI: usize = BLOCK_DIM * (BLOCK_DIM + 1) / 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorKind {
    Dense,
    Sparse,
    BlockDiagonal,
}

#[derive(Clone, Debug, PartialEq)]
enum FactorData {
    /// Row `i` holds `L[i][0..=i]` at offset `i(i+1)/2`.
    Dense(Vec<f64>),
    Sparse(Vec<(u32, u32, f64)>),
    BlockDiagonal(Vec<[f64; TRI]>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedFactor {
    n: usize,
    data: FactorData,
    /// `max(0, tau - L_ii^2)` added to the diagonal.
    clamp: Vec<f64>,
}

#[inline]
fn tri_index(r: usize, c: usize) -> usize {
    r * (r + 1) / 2 + c
}

impl LoadedFactor {
    fn finish(n: usize, data: FactorData) -> Result<Self> {
        let mut pivot = vec![0.0; n];
        match &data {
            FactorData::Dense(v) => {
                if v.len() != n * (n + 1) / 2 {
                    return Err(Error::format("dense factor length does not match n"));
                }
                for (i, p) in pivot.iter_mut().enumerate() {
                    *p = v[tri_index(i, i)];
                }
            }
            FactorData::Sparse(e) => {
                for &(r, c, v) in e {
                    let (r, c) = (r as usize, c as usize);
                    if r >= n || c > r {
                        return Err(Error::format(format!("sparse factor entry ({r}, {c}) outside the lower triangle of n = {n}")));
                    }
                    if r == c {
                        pivot[r] += v;
                    }
                }
            }
            FactorData::BlockDiagonal(blocks) => {
                if BLOCK_DIM * blocks.len() != n {
                    return Err(Error::format(format!(
                        "block-diagonal factor has {} blocks, n = {n} needs {}",
                        blocks.len(),
                        n / BLOCK_DIM
                    )));
                }
                for (b, blk) in blocks.iter().enumerate() {
                    for r in 0..BLOCK_DIM {
                        pivot[BLOCK_DIM * b + r] = blk[tri_index(r, r)];
                    }
                }
            }
        }
        let all_finite = match &data {
            FactorData::Dense(v) => v.iter().all(|x| x.is_finite()),
            FactorData::Sparse(e) => e.iter().all(|x| x.2.is_finite()),
            FactorData::BlockDiagonal(b) => b.iter().flatten().all(|x| x.is_finite()),
        };
        if !all_finite {
            return Err(Error::format("factor contains non-finite values"));
        }
        let clamp = pivot.iter().map(|p| (DIAG_CLAMP - p * p).max(0.0)).collect();
        Ok(LoadedFactor { n, data, clamp })
    }

    /// Dense factor from the lower triangle of `l` (upper part ignored).
    pub fn dense(l: &DMatrix<f64>) -> Result<Self> {
        let n = l.nrows();
        let mut v = Vec::with_capacity(n * (n + 1) / 2);
        for r in 0..n {
            for c in 0..=r {
                v.push(l[(r, c)]);
            }
        }
        Self::finish(n, FactorData::Dense(v))
    }

    pub fn sparse(n: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let e = entries.into_iter().map(|(r, c, v)| (r as u32, c as u32, v)).collect();
        Self::finish(n, FactorData::Sparse(e))
    }

    /// Sparse factor keeping only the entries of `l` where `a` is non-zero.
    pub fn sparse_masked(l: &DMatrix<f64>, a: &BlockSparseMatrix) -> Result<Self> {
        let n = l.nrows();
        let mut e = Vec::new();
        for r in 0..n {
            for c in 0..=r {
                if l[(r, c)] != 0.0 && a.has_entry(r, c) {
                    e.push((r, c, l[(r, c)]));
                }
            }
        }
        Self::sparse(n, e)
    }

    /// Block-diagonal factor from per-block 6x6 lower triangles.
    pub fn block_diagonal(blocks: &[nalgebra::Matrix6<f64>]) -> Result<Self> {
        let packed = blocks
            .iter()
            .map(|b| {
                let mut p = [0.0; TRI];
                for r in 0..BLOCK_DIM {
                    for c in 0..=r {
                        p[tri_index(r, c)] = b[(r, c)];
                    }
                }
                p
            })
            .collect();
        Self::finish(BLOCK_DIM * blocks.len(), FactorData::BlockDiagonal(packed))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> FactorKind {
        match self.data {
            FactorData::Dense(_) => FactorKind::Dense,
            FactorData::Sparse(_) => FactorKind::Sparse,
            FactorData::BlockDiagonal(_) => FactorKind::BlockDiagonal,
        }
    }

    /// Number of diagonal entries raised by the clamp.
    pub fn clamped_count(&self) -> usize {
        self.clamp.iter().filter(|c| **c > 0.0).count()
    }

    /// True if every sparse entry sits on a non-zero of `a`.
    pub fn matches_pattern(&self, a: &BlockSparseMatrix) -> bool {
        match &self.data {
            FactorData::Sparse(e) => e.iter().all(|&(r, c, _)| a.has_entry(r as usize, c as usize)),
            _ => true,
        }
    }

    /// `z = (L L^T + clamp) r`.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.n;
        match &self.data {
            FactorData::Dense(v) => {
                let mut w = vec![0.0; n];
                for i in 0..n {
                    let row = &v[tri_index(i, 0)..=tri_index(i, i)];
                    let ri = r[i];
                    for (wj, l) in w.iter_mut().zip(row) {
                        *wj += l * ri;
                    }
                }
                for i in 0..n {
                    let row = &v[tri_index(i, 0)..=tri_index(i, i)];
                    z[i] = row.iter().zip(&w).map(|(l, w)| l * w).sum();
                }
            }
            FactorData::Sparse(e) => {
                let mut w = vec![0.0; n];
                for &(i, j, l) in e {
                    w[j as usize] += l * r[i as usize];
                }
                z.fill(0.0);
                for &(i, j, l) in e {
                    z[i as usize] += l * w[j as usize];
                }
            }
            FactorData::BlockDiagonal(blocks) => {
                for (b, blk) in blocks.iter().enumerate() {
                    let o = BLOCK_DIM * b;
                    let mut w = [0.0; BLOCK_DIM];
                    for rr in 0..BLOCK_DIM {
                        for c in 0..=rr {
                            w[c] += blk[tri_index(rr, c)] * r[o + rr];
                        }
                    }
                    for rr in 0..BLOCK_DIM {
                        z[o + rr] = (0..=rr).map(|c| blk[tri_index(rr, c)] * w[c]).sum();
                    }
                }
            }
        }
        for i in 0..n {
            z[i] += self.clamp[i] * r[i];
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let kind: u8 = match self.kind() {
            FactorKind::Dense => 0,
            FactorKind::Sparse => 1,
            FactorKind::BlockDiagonal => 2,
        };
        out.push(kind);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        match &self.data {
            FactorData::Dense(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            FactorData::Sparse(e) => {
                out.extend_from_slice(&(e.len() as u32).to_le_bytes());
                for (r, c, v) in e {
                    out.extend_from_slice(&r.to_le_bytes());
                    out.extend_from_slice(&c.to_le_bytes());
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            FactorData::BlockDiagonal(b) => {
                out.extend_from_slice(&(b.len() as u32).to_le_bytes());
                b.iter().flatten().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(4)? != MAGIC {
            return Err(Error::format("missing NRPC header"));
        }
        let kind = rd.take(1)?[0];
        let n = rd.u32()? as usize;
        let data = match kind {
            0 => {
                let count = n
                    .checked_mul(n + 1)
                    .map(|v| v / 2)
                    .ok_or_else(|| Error::format("NRPC size overflow"))?;
                rd.expect_remaining(count.checked_mul(8))?;
                FactorData::Dense((0..count).map(|_| rd.f64()).collect::<Result<_>>()?)
            }
            1 => {
                let nnz = rd.u32()? as usize;
                rd.expect_remaining(nnz.checked_mul(16))?;
                let mut e = Vec::with_capacity(nnz);
                for _ in 0..nnz {
                    e.push((rd.u32()?, rd.u32()?, rd.f64()?));
                }
                FactorData::Sparse(e)
            }
            2 => {
                let nb = rd.u32()? as usize;
                rd.expect_remaining(nb.checked_mul(TRI * 8))?;
                let mut b = Vec::with_capacity(nb);
                for _ in 0..nb {
                    let mut p = [0.0; TRI];
                    for x in p.iter_mut() {
                        *x = rd.f64()?;
                    }
                    b.push(p);
                }
                FactorData::BlockDiagonal(b)
            }
            k => return Err(Error::format(format!("unknown NRPC kind {k}"))),
        };
        Self::finish(n, data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < k {
            return Err(Error::format(format!("truncated file at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Requires exactly `k` bytes left (no truncation, no trailing data).
    pub fn expect_remaining(&self, k: Option<usize>) -> Result<()> {
        let left = self.bytes.len() - self.pos;
        match k {
            Some(k) if k == left => Ok(()),
            Some(k) => Err(Error::format(format!("payload is {left} bytes, header implies {k}"))),
            None => Err(Error::format("payload size overflow")),
        }
    }
}
