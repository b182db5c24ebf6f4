use std::collections::BTreeMap;

use nalgebra::Matrix6;

use super::ResidualBlock;
use crate::graph::{DeformGraph, NODE_DOF};
use crate::solver::BlockSparseMatrix;

/// Builds `A = J^T J` and `b = -J^T r` over all blocks.
///
/// Rows are reduced in block order, then ascending row index, so the result
/// is bit-reproducible. Invalid nodes, and any degree of freedom no residual
/// touches, get a unit diagonal and a zero right-hand side so `A` stays
/// positive definite with a fixed layout.
pub fn assemble_system(blocks: &[ResidualBlock], g: &DeformGraph) -> (BlockSparseMatrix, Vec<f64>) {
    let nb = g.node_count();
    let n = NODE_DOF * nb;
    let mut acc: BTreeMap<(usize, usize), Matrix6<f64>> = BTreeMap::new();
    let mut b = vec![0.0; n];
    for block in blocks {
        for k in 0..block.len() {
            let (cols, vals) = block.jacobian_row(k);
            let r = block.r[k];
            for (&c1, &v1) in cols.iter().zip(vals) {
                b[c1] -= v1 * r;
                let bi = c1 / NODE_DOF;
                for (&c2, &v2) in cols.iter().zip(vals) {
                    let bj = c2 / NODE_DOF;
                    if bj > bi {
                        continue;
                    }
                    let m = acc.entry((bi, bj)).or_insert_with(Matrix6::zeros);
                    m[(c1 % NODE_DOF, c2 % NODE_DOF)] += v1 * v2;
                }
            }
        }
    }
    for i in 0..nb {
        let d = acc.entry((i, i)).or_insert_with(Matrix6::zeros);
        if !g.node_mask[i] {
            *d = Matrix6::identity();
            b[NODE_DOF * i..NODE_DOF * (i + 1)].fill(0.0);
            continue;
        }
        for a in 0..NODE_DOF {
            if d[(a, a)] == 0.0 {
                d[(a, a)] = 1.0;
                b[NODE_DOF * i + a] = 0.0;
            }
        }
    }
    let entries = acc.into_iter().map(|((i, j), m)| (i, j, m)).collect();
    let a = BlockSparseMatrix::from_lower(nb, entries).expect("assembled pattern is lower-triangular");
    (a, b)
}
