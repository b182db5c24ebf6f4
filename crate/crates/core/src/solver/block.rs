use nalgebra::{DMatrix, Matrix6};

use super::LinearOperator;
use crate::par;
use crate::{Error, Result};

pub const BLOCK_DIM: usize = 6;

pub type Block = Matrix6<f64>;

/// Symmetric matrix of 6x6 blocks in block-CSR form. Both triangles are
/// stored; every upper block is the exact transpose of its lower partner and
/// every block row has a diagonal block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSparseMatrix {
    nblocks: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    blocks: Vec<Block>,
    diag: Vec<usize>,
}

impl BlockSparseMatrix {
    /// Builds the matrix from its lower triangle `(row, col, block)` with
    /// `row >= col`. Missing diagonal blocks are zero-filled.
    pub fn from_lower(nblocks: usize, mut entries: Vec<(usize, usize, Block)>) -> Result<Self> {
        for &(r, c, _) in &entries {
            if r >= nblocks || c > r {
                return Err(Error::format(format!("block ({r}, {c}) is not in the lower triangle of {nblocks} blocks")));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        if entries.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::format("duplicate block"));
        }
        let mut rows: Vec<Vec<(usize, Block)>> = vec![Vec::new(); nblocks];
        for &(r, c, ref m) in &entries {
            rows[r].push((c, *m));
            if r != c {
                rows[c].push((r, m.transpose()));
            }
        }
        let mut row_ptr = Vec::with_capacity(nblocks + 1);
        let mut cols = Vec::new();
        let mut blocks = Vec::new();
        let mut diag = Vec::with_capacity(nblocks);
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            if !row.iter().any(|(c, _)| *c == i) {
                row.push((i, Block::zeros()));
            }
            row.sort_by_key(|(c, _)| *c);
            for (c, m) in row {
                if c == i {
                    diag.push(cols.len());
                }
                cols.push(c);
                blocks.push(m);
            }
            row_ptr.push(cols.len());
        }
        Ok(BlockSparseMatrix {
            nblocks,
            row_ptr,
            cols,
            blocks,
            diag,
        })
    }

    pub fn identity(nblocks: usize) -> Self {
        Self::from_lower(nblocks, (0..nblocks).map(|i| (i, i, Block::identity())).collect()).unwrap()
    }

    pub fn block_diagonal(blocks: Vec<Block>) -> Self {
        let n = blocks.len();
        Self::from_lower(n, blocks.into_iter().enumerate().map(|(i, b)| (i, i, b)).collect()).unwrap()
    }

    /// Blocks of `m` that contain a non-zero entry in the lower triangle
    /// (diagonal blocks always kept). `m` is assumed symmetric.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n % BLOCK_DIM != 0 || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n - n % BLOCK_DIM,
                got: n,
            });
        }
        let nb = n / BLOCK_DIM;
        let mut entries = Vec::new();
        for i in 0..nb {
            for j in 0..=i {
                let b: Block = m.fixed_view::<6, 6>(BLOCK_DIM * i, BLOCK_DIM * j).into_owned();
                if i == j || b.iter().any(|v| *v != 0.0) {
                    entries.push((i, j, b));
                }
            }
        }
        Self::from_lower(nb, entries)
    }

    #[inline]
    pub fn nblocks(&self) -> usize {
        self.nblocks
    }

    #[inline]
    pub fn n(&self) -> usize {
        BLOCK_DIM * self.nblocks
    }

    /// Column indices and blocks of block row `i`, ascending.
    pub fn row(&self, i: usize) -> (&[usize], &[Block]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.blocks[a..b])
    }

    pub fn diag_block(&self, i: usize) -> &Block {
        &self.blocks[self.diag[i]]
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&Block> {
        let (cols, blocks) = self.row(i);
        cols.binary_search(&j).ok().map(|k| &blocks[k])
    }

    /// Lower-triangle blocks `(row, col, block)` in ascending `(row, col)` order.
    pub fn lower_blocks(&self) -> impl Iterator<Item = (usize, usize, &Block)> + '_ {
        (0..self.nblocks).flat_map(move |i| {
            let (cols, blocks) = self.row(i);
            cols.iter()
                .zip(blocks)
                .take_while(move |(c, _)| **c <= i)
                .map(move |(c, b)| (i, *c, b))
        })
    }

    pub fn nnz_lower_blocks(&self) -> usize {
        (0..self.nblocks)
            .map(|i| self.row(i).0.iter().filter(|c| **c <= i).count())
            .sum()
    }

    /// Scalar diagonal of the matrix.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n())
            .map(|k| self.diag_block(k / BLOCK_DIM)[(k % BLOCK_DIM, k % BLOCK_DIM)])
            .collect()
    }

    /// `self + alpha * diag(self)`.
    pub fn with_boosted_diagonal(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.nblocks {
            let d = &mut out.blocks[out.diag[i]];
            for a in 0..BLOCK_DIM {
                d[(a, a)] += alpha * d[(a, a)];
            }
        }
        out
    }

    /// True if scalar entry `(r, c)` is structurally present and non-zero.
    pub fn has_entry(&self, r: usize, c: usize) -> bool {
        self.block(r / BLOCK_DIM, c / BLOCK_DIM)
            .is_some_and(|b| b[(r % BLOCK_DIM, c % BLOCK_DIM)] != 0.0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..self.nblocks {
            let (cols, blocks) = self.row(i);
            for (c, b) in cols.iter().zip(blocks) {
                m.fixed_view_mut::<6, 6>(BLOCK_DIM * i, BLOCK_DIM * c).copy_from(b);
            }
        }
        m
    }
}

impl LinearOperator for BlockSparseMatrix {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        par::for_each_chunk(y, BLOCK_DIM, |i, out| {
            let mut acc = [0.0; BLOCK_DIM];
            let (cols, blocks) = self.row(i);
            for (c, b) in cols.iter().zip(blocks) {
                let xs = &x[BLOCK_DIM * c..BLOCK_DIM * c + BLOCK_DIM];
                for (r, a) in acc.iter_mut().enumerate() {
                    for k in 0..BLOCK_DIM {
                        *a += b[(r, k)] * xs[k];
                    }
                }
            }
            out.copy_from_slice(&acc);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BlockSparseMatrix {
        let mut d0 = Block::identity() * 4.0;
        d0[(1, 0)] = 0.5;
        d0[(0, 1)] = 0.5;
        let off = Block::from_fn(|r, c| (r * 6 + c) as f64 * 0.01);
        BlockSparseMatrix::from_lower(3, vec![(2, 0, off), (0, 0, d0), (1, 1, Block::identity())]).unwrap()
    }

    #[test]
    fn structure_is_symmetric_and_complete() {
        let a = sample();
        assert_eq!(a.row(0).0, &[0, 2]);
        assert_eq!(a.row(2).0, &[0, 2]);
        assert_eq!(a.diag_block(2), &Block::zeros());
        assert_eq!(*a.block(0, 2).unwrap(), a.block(2, 0).unwrap().transpose());
        let d = a.to_dense();
        assert_eq!(d, d.transpose());
        assert_eq!(a.nnz_lower_blocks(), 4);
        assert_eq!(BlockSparseMatrix::from_dense(&d).unwrap().to_dense(), d);
    }

    #[test]
    fn matvec_matches_dense() {
        let a = sample();
        let x: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; 18];
        a.apply(&x, &mut y);
        let d = a.to_dense();
        let yd = &d * nalgebra::DVector::from_column_slice(&x);
        for i in 0..18 {
            assert!((y[i] - yd[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_upper_and_duplicate_blocks() {
        assert!(BlockSparseMatrix::from_lower(2, vec![(0, 1, Block::zeros())]).is_err());
        assert!(BlockSparseMatrix::from_lower(2, vec![(1, 0, Block::zeros()), (1, 0, Block::zeros())]).is_err());
    }
}
