use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, Matrix6, Vector6, U6};
use serde::{Deserialize, Serialize};

use super::{Block, BlockSparseMatrix, FactorKind, LoadedFactor, BLOCK_DIM};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PreconditionerKind {
    Identity,
    BlockJacobi,
    IncompleteCholesky,
    LoadedDense,
    LoadedSparse,
    LoadedBlockDiagonal,
}

impl PreconditionerKind {
    pub fn name(&self) -> &'static str {
        match self {
            PreconditionerKind::Identity => "identity",
            PreconditionerKind::BlockJacobi => "block-jacobi",
            PreconditionerKind::IncompleteCholesky => "ic0",
            PreconditionerKind::LoadedDense => "loaded-dense",
            PreconditionerKind::LoadedSparse => "loaded-sparse",
            PreconditionerKind::LoadedBlockDiagonal => "loaded-blockdiag",
        }
    }

    pub fn is_loaded(&self) -> bool {
        matches!(
            self,
            PreconditionerKind::LoadedDense | PreconditionerKind::LoadedSparse | PreconditionerKind::LoadedBlockDiagonal
        )
    }
}

impl fmt::Display for PreconditionerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<PreconditionerKind> for String {
    fn from(k: PreconditionerKind) -> String {
        k.name().to_string()
    }
}

impl TryFrom<String> for PreconditionerKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for PreconditionerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" | "none" => PreconditionerKind::Identity,
            "block-jacobi" | "jacobi" => PreconditionerKind::BlockJacobi,
            "ic0" | "ic" | "incomplete-cholesky" => PreconditionerKind::IncompleteCholesky,
            "loaded-dense" => PreconditionerKind::LoadedDense,
            "loaded-sparse" => PreconditionerKind::LoadedSparse,
            "loaded-blockdiag" => PreconditionerKind::LoadedBlockDiagonal,
            other => return Err(Error::InvalidConfig(format!("unknown preconditioner {other:?}"))),
        })
    }
}

/// `z = M^-1 r` inside PCG.
#[derive(Clone, Debug)]
pub enum Preconditioner {
    Identity,
    BlockJacobi(BlockJacobi),
    IncompleteCholesky(IncompleteCholesky),
    Loaded(LoadedFactor),
}

impl Preconditioner {
    pub fn kind(&self) -> PreconditionerKind {
        match self {
            Preconditioner::Identity => PreconditionerKind::Identity,
            Preconditioner::BlockJacobi(_) => PreconditionerKind::BlockJacobi,
            Preconditioner::IncompleteCholesky(_) => PreconditionerKind::IncompleteCholesky,
            Preconditioner::Loaded(f) => match f.kind() {
                FactorKind::Dense => PreconditionerKind::LoadedDense,
                FactorKind::Sparse => PreconditionerKind::LoadedSparse,
                FactorKind::BlockDiagonal => PreconditionerKind::LoadedBlockDiagonal,
            },
        }
    }

    /// Operator size, or `None` for the size-agnostic identity.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Preconditioner::Identity => None,
            Preconditioner::BlockJacobi(p) => Some(BLOCK_DIM * p.factors.len()),
            Preconditioner::IncompleteCholesky(p) => Some(BLOCK_DIM * p.diag.len()),
            Preconditioner::Loaded(f) => Some(f.n()),
        }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Identity => z.copy_from_slice(r),
            Preconditioner::BlockJacobi(p) => p.apply(r, z),
            Preconditioner::IncompleteCholesky(p) => p.apply(r, z),
            Preconditioner::Loaded(f) => f.apply(r, z),
        }
    }

    /// Builds a classic preconditioner from `a`. Loaded kinds need a factor
    /// file and are rejected here.
    pub fn build(kind: PreconditionerKind, a: &BlockSparseMatrix) -> Result<Self> {
        match kind {
            PreconditionerKind::Identity => Ok(Preconditioner::Identity),
            PreconditionerKind::BlockJacobi => block_jacobi(a).map(Preconditioner::BlockJacobi),
            PreconditionerKind::IncompleteCholesky => incomplete_cholesky(a).map(Preconditioner::IncompleteCholesky),
            k => Err(Error::InvalidConfig(format!("{k} preconditioners are loaded from a factor file"))),
        }
    }

    /// Loads an NRPC factor file and checks it against the system size `n`.
    pub fn load(path: &std::path::Path, n: usize) -> Result<Self> {
        let f = LoadedFactor::load(path)?;
        if f.n() != n {
            return Err(Error::DimensionMismatch { expected: n, got: f.n() });
        }
        Ok(Preconditioner::Loaded(f))
    }
}

/// Cholesky factors of the diagonal blocks.
#[derive(Clone, Debug)]
pub struct BlockJacobi {
    factors: Vec<Cholesky<f64, U6>>,
}

impl BlockJacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for (i, f) in self.factors.iter().enumerate() {
            let s = BLOCK_DIM * i..BLOCK_DIM * (i + 1);
            let sol = f.solve(&Vector6::from_column_slice(&r[s.clone()]));
            z[s].copy_from_slice(sol.as_slice());
        }
    }
}

pub fn block_jacobi(a: &BlockSparseMatrix) -> Result<BlockJacobi> {
    let factors = (0..a.nblocks())
        .map(|i| Cholesky::new(*a.diag_block(i)).ok_or(Error::SingularBlock { node: i }))
        .collect::<Result<_>>()?;
    Ok(BlockJacobi { factors })
}

/// Block IC(0): `L` restricted to the lower block pattern of `A`.
#[derive(Clone, Debug)]
pub struct IncompleteCholesky {
    /// Per block row, strictly-lower `(col, L_ij)` ascending.
    lower: Vec<Vec<(usize, Block)>>,
    /// Lower-triangular diagonal blocks `L_ii`.
    diag: Vec<Block>,
    /// Diagonal boost `alpha` that made the factorization succeed (0 if none).
    pub boost: f64,
}

pub const IC_MAX_BOOSTS: usize = 20;

pub fn incomplete_cholesky(a: &BlockSparseMatrix) -> Result<IncompleteCholesky> {
    if let Some(f) = try_block_ic(a, 0.0) {
        return Ok(f);
    }
    let mut alpha = 1e-3;
    for _ in 0..IC_MAX_BOOSTS {
        if let Some(f) = try_block_ic(&a.with_boosted_diagonal(alpha), alpha) {
            return Ok(f);
        }
        alpha *= 2.0;
    }
    Err(Error::FactorizationFailed { attempts: IC_MAX_BOOSTS })
}

fn try_block_ic(a: &BlockSparseMatrix, boost: f64) -> Option<IncompleteCholesky> {
    let nb = a.nblocks();
    let mut lower: Vec<Vec<(usize, Block)>> = Vec::with_capacity(nb);
    let mut diag: Vec<Block> = Vec::with_capacity(nb);
    for i in 0..nb {
        let (cols, blocks) = a.row(i);
        let mut row: Vec<(usize, Block)> = Vec::new();
        for (&j, aij) in cols.iter().zip(blocks) {
            if j >= i {
                break;
            }
            // S = A_ij - sum_{k < j} L_ik L_jk^T over the shared pattern
            let s = aij - merged_product(&row, &lower[j]);
            // L_ij L_jj^T = S  =>  L_jj L_ij^T = S^T
            let lij_t = diag[j].solve_lower_triangular(&s.transpose())?;
            row.push((j, lij_t.transpose()));
        }
        let d = a.diag_block(i) - merged_product(&row, &row);
        let chol = Cholesky::new(d)?;
        let l = chol.l();
        if l.iter().any(|v| !v.is_finite()) {
            return None;
        }
        diag.push(l);
        lower.push(row);
    }
    Some(IncompleteCholesky { lower, diag, boost })
}

/// `sum_k X_k Y_k^T` over column indices present in both sorted rows.
fn merged_product(x: &[(usize, Block)], y: &[(usize, Block)]) -> Block {
    let mut acc = Matrix6::zeros();
    let (mut p, mut q) = (0, 0);
    while p < x.len() && q < y.len() {
        match x[p].0.cmp(&y[q].0) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                acc += x[p].1 * y[q].1.transpose();
                p += 1;
                q += 1;
            }
        }
    }
    acc
}

impl IncompleteCholesky {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let nb = self.diag.len();
        let seg = |v: &[f64], i: usize| Vector6::from_column_slice(&v[BLOCK_DIM * i..BLOCK_DIM * (i + 1)]);
        // L y = r
        let mut y: Vec<Vector6<f64>> = Vec::with_capacity(nb);
        for i in 0..nb {
            let mut rhs = seg(r, i);
            for (j, l) in &self.lower[i] {
                rhs -= l * y[*j];
            }
            y.push(self.diag[i].solve_lower_triangular(&rhs).expect("nonsingular factor"));
        }
        // L^T z = y
        for i in (0..nb).rev() {
            let zi = self.diag[i].tr_solve_lower_triangular(&y[i]).expect("nonsingular factor");
            for (j, l) in &self.lower[i] {
                y[*j] -= l.transpose() * zi;
            }
            z[BLOCK_DIM * i..BLOCK_DIM * (i + 1)].copy_from_slice(zi.as_slice());
        }
    }

    /// Dense `L` (test helper).
    pub fn dense_factor(&self) -> nalgebra::DMatrix<f64> {
        let n = BLOCK_DIM * self.diag.len();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for (i, d) in self.diag.iter().enumerate() {
            m.fixed_view_mut::<6, 6>(BLOCK_DIM * i, BLOCK_DIM * i).copy_from(d);
            for (j, l) in &self.lower[i] {
                m.fixed_view_mut::<6, 6>(BLOCK_DIM * i, BLOCK_DIM * j).copy_from(l);
            }
        }
        m
    }
}
