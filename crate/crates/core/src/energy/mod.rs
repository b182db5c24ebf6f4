//! Residuals and Jacobians of the tracking energy, and the Gauss-Newton
//! normal equations.
//!
//! The energy is `E = E_fea + E_geo + E_reg`:
//!
//! - feature term: per valid node, the source feature map sampled at the
//!   warped node position minus the target feature of that node;
//! - geometric term: the source depth sampled at the warped position minus
//!   the depth of the translated target point (projective depth);
//! - ARAP term: per valid directed edge `(i, j)`,
//!   `R_i (p_j - p_i) - ((p_j + t_j) - (p_i + t_i))` with rest positions `p`.
//!
//! Every residual is pre-multiplied by the square root of its term weight, so
//! the energy is the plain sum of squares. Residuals use the sign convention
//! `predicted - observed`.

mod assemble;
mod residuals;
mod sampler;

pub use assemble::assemble_system;
pub use residuals::{arap_residuals, feature_residuals, geometric_residuals};
pub use sampler::{sample_bilinear, NodeGrid};

use serde::{Deserialize, Serialize};

use crate::frames::{Frame, Intrinsics};
use crate::graph::{DeformGraph, Lattice};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub feature: f64,
    pub geometric: f64,
    pub arap: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            feature: 1.0,
            geometric: 0.5,
            arap: 40.0,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.feature, self.geometric, self.arap];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || all.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidConfig(format!("invalid weights {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Feature,
    Geometric,
    Arap,
}

/// Source and target camera models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPair {
    pub src: Intrinsics,
    pub tgt: Intrinsics,
}

/// Weighted residual rows of one energy term with their sparse Jacobian rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub term: Term,
    pub r: Vec<f64>,
    /// Nodes touched by each row.
    pub row_nodes: Vec<(usize, Option<usize>)>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl ResidualBlock {
    pub(crate) fn new(term: Term) -> Self {
        ResidualBlock {
            term,
            r: Vec::new(),
            row_nodes: Vec::new(),
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub(crate) fn push_row(&mut self, r: f64, nodes: (usize, Option<usize>), entries: impl IntoIterator<Item = (usize, f64)>) {
        self.r.push(r);
        self.row_nodes.push(nodes);
        for (c, v) in entries {
            self.cols.push(c);
            self.vals.push(v);
        }
        self.row_ptr.push(self.cols.len());
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// State slots and values of Jacobian row `k`.
    pub fn jacobian_row(&self, k: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[k], self.row_ptr[k + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn energy(&self) -> f64 {
        self.r.iter().map(|v| v * v).sum()
    }

    /// Row-major dense Jacobian with `n` columns.
    pub fn dense_jacobian(&self, n: usize) -> Vec<f64> {
        let mut j = vec![0.0; self.len() * n];
        for k in 0..self.len() {
            let (cols, vals) = self.jacobian_row(k);
            for (c, v) in cols.iter().zip(vals) {
                j[k * n + c] += v;
            }
        }
        j
    }
}

/// Sum of squared (already weighted) residuals.
pub fn total_energy(blocks: &[ResidualBlock]) -> f64 {
    blocks.iter().map(ResidualBlock::energy).sum()
}

/// Area-averaged color of `frame` over each lattice cell: one channel
/// (grayscale) or three (RGB), values in [0, 1]. A cell is valid only if
/// every pixel in it has depth.
pub fn color_features(frame: &Frame, lattice: &Lattice, grayscale: bool) -> NodeGrid {
    let c = if grayscale { 1 } else { 3 };
    let n = lattice.node_count();
    let mut data = Vec::with_capacity(n * c);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let p = lattice.node_pixel(i);
        let x0 = (p.x - lattice.sx / 2.0).ceil().max(0.0) as usize;
        let y0 = (p.y - lattice.sy / 2.0).ceil().max(0.0) as usize;
        let x1 = ((p.x + lattice.sx / 2.0).ceil() as usize).min(frame.width()).max(x0 + 1);
        let y1 = ((p.y + lattice.sy / 2.0).ceil() as usize).min(frame.height()).max(y0 + 1);
        let mut acc = [0.0; 3];
        let mut covered = true;
        for y in y0..y1 {
            for x in x0..x1 {
                covered &= frame.depth_at(x, y) > 0.0;
                let rgb = frame.rgb_at(x, y);
                for ch in 0..3 {
                    acc[ch] += rgb[ch] as f64 / 255.0;
                }
            }
        }
        valid.push(covered);
        let count = ((x1 - x0) * (y1 - y0)) as f64;
        if grayscale {
            data.push((acc[0] + acc[1] + acc[2]) / (3.0 * count));
        } else {
            data.extend(acc.iter().map(|a| a / count));
        }
    }
    NodeGrid {
        w: lattice.w,
        h: lattice.h,
        c,
        data,
        valid,
    }
}

/// Everything needed to evaluate the energy of a graph on one frame pair.
#[derive(Clone, Debug)]
pub struct EnergyModel {
    pub cams: CameraPair,
    pub weights: Weights,
    pub feat_src: Option<NodeGrid>,
    pub feat_tgt: Option<NodeGrid>,
    /// Source depth at node or full resolution.
    pub depth_src: NodeGrid,
    /// Target depth at the graph nodes.
    pub depth_tgt: Vec<f64>,
}

impl EnergyModel {
    /// Residual blocks of every term with non-zero weight, in the order
    /// feature, geometric, ARAP.
    pub fn residuals(&self, g: &DeformGraph) -> Result<Vec<ResidualBlock>> {
        let mut out = Vec::with_capacity(3);
        if self.weights.feature > 0.0 {
            if let (Some(fs), Some(ft)) = (&self.feat_src, &self.feat_tgt) {
                out.push(feature_residuals(g, fs, ft, &self.depth_tgt, &self.cams, self.weights.feature)?);
            }
        }
        if self.weights.geometric > 0.0 {
            out.push(geometric_residuals(
                g,
                &self.depth_src,
                &self.depth_tgt,
                &self.cams,
                self.weights.geometric,
            )?);
        }
        if self.weights.arap > 0.0 {
            out.push(arap_residuals(g, self.weights.arap));
        }
        Ok(out)
    }

    pub fn energy(&self, g: &DeformGraph) -> Result<f64> {
        Ok(total_energy(&self.residuals(g)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_is_sum_of_squares() {
        let mut b = ResidualBlock::new(Term::Arap);
        assert_eq!(total_energy(&[b.clone()]), 0.0);
        b.push_row(2.0, (0, None), [(0, 1.0)]);
        assert_eq!(total_energy(&[b.clone()]), 4.0);
        let mut c = ResidualBlock::new(Term::Feature);
        let vals = [0.3, -1.7, 2.25, 1e-3];
        for v in vals {
            c.push_row(v, (1, None), []);
        }
        let direct: f64 = 4.0 + vals.iter().map(|v| v * v).sum::<f64>();
        assert!((total_energy(&[b, c]) - direct).abs() < 1e-15);
    }

    #[test]
    fn weights_validation() {
        assert!(Weights::default().validate().is_ok());
        assert!(Weights { feature: 0.0, geometric: 0.0, arap: 0.0 }.validate().is_err());
        assert!(Weights { feature: -1.0, geometric: 0.0, arap: 1.0 }.validate().is_err());
    }
}
