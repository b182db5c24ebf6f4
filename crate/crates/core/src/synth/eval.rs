use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::frames::Frame;
use crate::graph::DeformGraph;
use crate::{Error, Result};

/// Depth agreement required for a pixel to count as seen by both frames.
pub const VISIBILITY_TOL: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean Euclidean end-point error over valid nodes, meters.
    pub epe_mean: f64,
    pub epe_median: f64,
    /// Sum over valid nodes of the L1 norm of the translation error.
    pub flow_loss: f64,
    /// Per-node Euclidean error; `None` for invalid nodes.
    pub per_node_error: Vec<Option<f64>>,
    pub valid_nodes: usize,
}

pub fn evaluate(trans: &[Vector3<f64>], gt_flow: &[Vector3<f64>], mask: &[bool]) -> Result<EvalReport> {
    for len in [gt_flow.len(), mask.len()] {
        if len != trans.len() {
            return Err(Error::DimensionMismatch { expected: trans.len(), got: len });
        }
    }
    let mut per_node = Vec::with_capacity(trans.len());
    let mut errors = Vec::new();
    let mut flow_loss = 0.0;
    for ((t, g), m) in trans.iter().zip(gt_flow).zip(mask) {
        if !m {
            per_node.push(None);
            continue;
        }
        let d = t - g;
        let e = d.norm();
        flow_loss += d.abs().sum();
        errors.push(e);
        per_node.push(Some(e));
    }
    if errors.is_empty() {
        return Err(Error::NoValidNodes);
    }
    let epe_mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let epe_median = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
    Ok(EvalReport {
        epe_mean,
        epe_median,
        flow_loss,
        per_node_error: per_node,
        valid_nodes: errors.len(),
    })
}

/// [`evaluate`] on a graph's translations and node mask.
pub fn evaluate_graph(g: &DeformGraph, gt_flow: &[Vector3<f64>]) -> Result<EvalReport> {
    evaluate(&g.trans, gt_flow, &g.node_mask)
}

/// L1 distance between a solver iterate and the converged solution.
pub fn pcg_loss(x: &[f64], x_gt: &[f64]) -> Result<f64> {
    if x.len() != x_gt.len() {
        return Err(Error::DimensionMismatch { expected: x_gt.len(), got: x.len() });
    }
    Ok(x.iter().zip(x_gt).map(|(a, b)| (a - b).abs()).sum())
}

/// Motion of target surface points into the source camera.
#[derive(Clone, Debug, PartialEq)]
pub enum Motion {
    /// `X -> R X + t` for every point.
    Rigid { rotation: Matrix3<f64>, translation: Vector3<f64> },
    /// `X -> X + d` with one displacement per target pixel, row-major.
    PerPixel(Vec<Vector3<f64>>),
}

impl Motion {
    pub fn identity() -> Self {
        Motion::Rigid {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    fn apply(&self, idx: usize, p: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Motion::Rigid { rotation, translation } => rotation * p + translation,
            Motion::PerPixel(d) => p + d[idx],
        }
    }

    fn check(&self, target: &Frame) -> Result<()> {
        match self {
            Motion::PerPixel(d) if d.len() != target.depth.len() => Err(Error::DimensionMismatch {
                expected: target.depth.len(),
                got: d.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// Warped source pixel and moved depth of every valid target pixel that is
/// also seen by the source.
fn covisible_pixels(source: &Frame, target: &Frame, motion: &Motion) -> Result<(usize, Vec<(usize, Vector2<f64>)>)> {
    motion.check(target)?;
    let (w, h) = (target.width(), target.height());
    let (sw, sh) = (source.width() as f64, source.height() as f64);
    let mut valid = 0;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let d = target.depth[idx];
            if d <= 0.0 {
                continue;
            }
            valid += 1;
            let p = target.intrinsics.back_project(Vector2::new(x as f64, y as f64), d)?;
            let q = motion.apply(idx, &p);
            let Ok(px) = source.intrinsics.project(&q) else { continue };
            let (nx, ny) = (px.x.round(), px.y.round());
            if nx < 0.0 || ny < 0.0 || nx > sw - 1.0 || ny > sh - 1.0 {
                continue;
            }
            let ds = source.depth_at(nx as usize, ny as usize);
            if ds > 0.0 && (ds - q.z).abs() <= VISIBILITY_TOL {
                out.push((idx, px));
            }
        }
    }
    Ok((valid, out))
}

/// Fraction of valid target pixels that land, under `motion`, inside the
/// source image on a source depth within [`VISIBILITY_TOL`] of the moved
/// depth. Nearest-pixel depth lookup.
pub fn covisibility(source: &Frame, target: &Frame, motion: &Motion) -> Result<f64> {
    let (valid, seen) = covisible_pixels(source, target, motion)?;
    Ok(if valid == 0 { 0.0 } else { seen.len() as f64 / valid as f64 })
}

/// Mean absolute grayscale difference over covisible pixels, with the source
/// sampled bilinearly at the warped position.
pub fn photo_consistency_error(source: &Frame, target: &Frame, motion: &Motion) -> Result<f64> {
    let (_, seen) = covisible_pixels(source, target, motion)?;
    if seen.is_empty() {
        return Err(Error::NoCovisiblePixels);
    }
    let (w, sw, sh) = (target.width(), source.width(), source.height());
    let total: f64 = seen
        .iter()
        .map(|(idx, px)| {
            let u = px.x.clamp(0.0, (sw - 1) as f64);
            let v = px.y.clamp(0.0, (sh - 1) as f64);
            let x0 = (u.floor() as usize).min(sw.saturating_sub(2));
            let y0 = (v.floor() as usize).min(sh.saturating_sub(2));
            let (fx, fy) = (u - x0 as f64, v - y0 as f64);
            let i = |x, y| source.intensity_at(x, y);
            let top = i(x0, y0) * (1.0 - fx) + i(x0 + 1, y0) * fx;
            let bottom = i(x0, y0 + 1) * (1.0 - fx) + i(x0 + 1, y0 + 1) * fx;
            let s = top * (1.0 - fy) + bottom * fy;
            (s - target.intensity_at(idx % w, idx / w)).abs()
        })
        .sum();
    Ok(total / seen.len() as f64)
}
