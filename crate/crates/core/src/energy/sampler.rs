use nalgebra::Vector2;

use crate::frames::FeatureMap;
use crate::{Error, Result};

/// A `w x h x c` grid of reals with a per-cell validity flag, sampled bilinearly.
/// Cell `(x, y)` holds channels `data[(y * w + x) * c ..][..c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeGrid {
    pub w: usize,
    pub h: usize,
    pub c: usize,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl NodeGrid {
    pub fn new(w: usize, h: usize, c: usize, data: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if data.len() != w * h * c {
            return Err(Error::DimensionMismatch {
                expected: w * h * c,
                got: data.len(),
            });
        }
        if valid.len() != w * h {
            return Err(Error::DimensionMismatch {
                expected: w * h,
                got: valid.len(),
            });
        }
        Ok(NodeGrid { w, h, c, data, valid })
    }

    /// Single-channel depth grid; cells with depth `<= 0` are invalid.
    pub fn from_depth(w: usize, h: usize, depth: Vec<f64>) -> Result<Self> {
        let valid = depth.iter().map(|d| *d > 0.0).collect();
        Self::new(w, h, 1, depth, valid)
    }

    pub fn from_features(f: &FeatureMap, valid: Option<Vec<bool>>) -> Result<Self> {
        let data = f.data.iter().map(|v| *v as f64).collect();
        let valid = valid.unwrap_or_else(|| vec![true; f.w * f.h]);
        Self::new(f.w, f.h, f.c, data, valid)
    }

    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.w + x) * self.c;
        &self.data[i..i + self.c]
    }

    /// Bilinear sample at continuous grid coordinate `uv`, writing the values
    /// and their derivatives `[d/du, d/dv]` per channel.
    ///
    /// On an integer coordinate the derivative is taken from the cell to the
    /// right/below (the left/above cell on the last row or column).
    pub fn sample_into(&self, uv: &Vector2<f64>, values: &mut [f64], grads: &mut [[f64; 2]]) -> Result<()> {
        let (u, v) = (uv.x, uv.y);
        let max_u = (self.w - 1) as f64;
        let max_v = (self.h - 1) as f64;
        if !(u >= 0.0 && v >= 0.0 && u <= max_u && v <= max_v) {
            return Err(Error::OutOfBounds { u, v });
        }
        let x0 = if self.w > 1 { (u.floor() as usize).min(self.w - 2) } else { 0 };
        let y0 = if self.h > 1 { (v.floor() as usize).min(self.h - 2) } else { 0 };
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)];
        if corners.iter().any(|&(x, y)| !self.valid[y * self.w + x]) {
            return Err(Error::InvalidCorner { u, v });
        }
        let fu = u - x0 as f64;
        let fv = v - y0 as f64;
        let (c00, c10, c01, c11) = (self.cell(x0, y0), self.cell(x1, y0), self.cell(x0, y1), self.cell(x1, y1));
        for ch in 0..self.c {
            let top = c00[ch] + fu * (c10[ch] - c00[ch]);
            let bot = c01[ch] + fu * (c11[ch] - c01[ch]);
            values[ch] = top + fv * (bot - top);
            let du = (1.0 - fv) * (c10[ch] - c00[ch]) + fv * (c11[ch] - c01[ch]);
            grads[ch] = [du, bot - top];
        }
        Ok(())
    }
}

/// Bilinear sample of `grid` at `uv` with the analytic Jacobian w.r.t. `uv`.
pub fn sample_bilinear(grid: &NodeGrid, uv: &Vector2<f64>) -> Result<(Vec<f64>, Vec<[f64; 2]>)> {
    let mut values = vec![0.0; grid.c];
    let mut grads = vec![[0.0; 2]; grid.c];
    grid.sample_into(uv, &mut values, &mut grads)?;
    Ok((values, grads))
}
