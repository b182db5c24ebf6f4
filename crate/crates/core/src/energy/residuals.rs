use nalgebra::{Matrix2x3, Vector2, Vector3};

use super::{CameraPair, NodeGrid, ResidualBlock, Term};
use crate::graph::{skew, DeformGraph, Lattice, NODE_DOF};
use crate::par;
use crate::{Error, Result};

/// Warped grid coordinate of node `i` and its derivative w.r.t. `t_i`.
struct Warp {
    uv: Vector2<f64>,
    point: Vector3<f64>,
    duv_dt: Matrix2x3<f64>,
}

fn warp_node(g: &DeformGraph, i: usize, depth: f64, cams: &CameraPair, src_lattice: &Lattice) -> Option<Warp> {
    let p = cams.tgt.back_project(g.node_pixel[i], depth).ok()? + g.trans[i];
    let px = cams.src.project(&p).ok()?;
    let scale = src_lattice.grid_per_pixel();
    let jp = cams.src.project_jacobian(&p);
    let mut duv_dt = jp;
    for c in 0..3 {
        duv_dt[(0, c)] *= scale.x;
        duv_dt[(1, c)] *= scale.y;
    }
    Some(Warp {
        uv: src_lattice.to_grid(&px),
        point: p,
        duv_dt,
    })
}

fn check_node_res(g: &DeformGraph, w: usize, h: usize) -> Result<()> {
    if (w, h) != (g.w(), g.h()) {
        return Err(Error::ResolutionMismatch {
            w: g.w(),
            h: g.h(),
            got_w: w,
            got_h: h,
        });
    }
    Ok(())
}

fn grid_lattice(grid: &NodeGrid, cams: &CameraPair) -> Result<Lattice> {
    Lattice::new(grid.w, grid.h, cams.src.width, cams.src.height)
}

struct NodeRows {
    r: Vec<f64>,
    jt: Vec<[f64; 3]>,
}

fn collect_node_rows(term: Term, rows: Vec<Option<NodeRows>>) -> ResidualBlock {
    let mut block = ResidualBlock::new(term);
    for (i, rows) in rows.into_iter().enumerate() {
        let Some(rows) = rows else { continue };
        let base = NODE_DOF * i + 3;
        for (r, jt) in rows.r.iter().zip(&rows.jt) {
            block.push_row(*r, (i, None), (0..3).map(|a| (base + a, jt[a])));
        }
    }
    block
}

/// Feature term: `sqrt(w) * (F_S(warp(i)) - F_T(i))` for every channel of
/// every valid node whose warp lands on four valid source cells.
pub fn feature_residuals(
    g: &DeformGraph,
    feat_src: &NodeGrid,
    feat_tgt: &NodeGrid,
    depth_tgt: &[f64],
    cams: &CameraPair,
    weight: f64,
) -> Result<ResidualBlock> {
    check_node_res(g, feat_src.w, feat_src.h)?;
    check_node_res(g, feat_tgt.w, feat_tgt.h)?;
    if depth_tgt.len() != g.node_count() {
        return Err(Error::DimensionMismatch {
            expected: g.node_count(),
            got: depth_tgt.len(),
        });
    }
    if feat_src.c != feat_tgt.c {
        return Err(Error::DimensionMismatch {
            expected: feat_tgt.c,
            got: feat_src.c,
        });
    }
    let lattice = grid_lattice(feat_src, cams)?;
    let sw = weight.sqrt();
    let c = feat_src.c;
    let rows = par::map_range(g.node_count(), |i| {
        if !g.node_mask[i] {
            return None;
        }
        let warp = warp_node(g, i, depth_tgt[i], cams, &lattice)?;
        let mut vals = vec![0.0; c];
        let mut grads = vec![[0.0; 2]; c];
        feat_src.sample_into(&warp.uv, &mut vals, &mut grads).ok()?;
        let target = feat_tgt.cell(i % g.w(), i / g.w());
        let mut out = NodeRows {
            r: Vec::with_capacity(c),
            jt: Vec::with_capacity(c),
        };
        for ch in 0..c {
            out.r.push(sw * (vals[ch] - target[ch]));
            let d = Vector2::new(grads[ch][0], grads[ch][1]).transpose() * warp.duv_dt;
            out.jt.push([sw * d[0], sw * d[1], sw * d[2]]);
        }
        Some(out)
    });
    Ok(collect_node_rows(Term::Feature, rows))
}

/// Projective depth term: `sqrt(w) * (D_S(warp(i)) - z_i')` where `z_i'` is
/// the depth of the translated target point. `depth_src` may be at node or
/// full image resolution; its pixel mapping follows from its size.
pub fn geometric_residuals(
    g: &DeformGraph,
    depth_src: &NodeGrid,
    depth_tgt: &[f64],
    cams: &CameraPair,
    weight: f64,
) -> Result<ResidualBlock> {
    if depth_tgt.len() != g.node_count() {
        return Err(Error::DimensionMismatch {
            expected: g.node_count(),
            got: depth_tgt.len(),
        });
    }
    if depth_src.c != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: depth_src.c,
        });
    }
    let node_res = (depth_src.w, depth_src.h) == (g.w(), g.h());
    let full_res = (depth_src.w, depth_src.h) == (cams.src.width, cams.src.height);
    if !node_res && !full_res {
        return Err(Error::ResolutionMismatch {
            w: g.w(),
            h: g.h(),
            got_w: depth_src.w,
            got_h: depth_src.h,
        });
    }
    let lattice = grid_lattice(depth_src, cams)?;
    let sw = weight.sqrt();
    let rows = par::map_range(g.node_count(), |i| {
        if !g.node_mask[i] {
            return None;
        }
        let warp = warp_node(g, i, depth_tgt[i], cams, &lattice)?;
        let mut val = [0.0];
        let mut grad = [[0.0; 2]];
        depth_src.sample_into(&warp.uv, &mut val, &mut grad).ok()?;
        let d = Vector2::new(grad[0][0], grad[0][1]).transpose() * warp.duv_dt;
        Some(NodeRows {
            r: vec![sw * (val[0] - warp.point.z)],
            jt: vec![[sw * d[0], sw * d[1], sw * (d[2] - 1.0)]],
        })
    });
    Ok(collect_node_rows(Term::Geometric, rows))
}

/// ARAP term over every valid directed edge, three rows per edge.
pub fn arap_residuals(g: &DeformGraph, weight: f64) -> ResidualBlock {
    let sw = weight.sqrt();
    let mut block = ResidualBlock::new(Term::Arap);
    for (i, j) in g.edges() {
        let rest = g.node_pos[j] - g.node_pos[i];
        let rotated = g.rot[i] * rest;
        let moved = (g.node_pos[j] + g.trans[j]) - (g.node_pos[i] + g.trans[i]);
        let r = (rotated - moved) * sw;
        // d(exp([w]x) R v)/dw at w = 0 is -[R v]x
        let jw = -skew(&rotated) * sw;
        let (bi, bj) = (NODE_DOF * i, NODE_DOF * j);
        for a in 0..3 {
            let mut entries = Vec::with_capacity(5);
            for c in 0..3 {
                entries.push((bi + c, jw[(a, c)]));
            }
            entries.push((bi + 3 + a, sw));
            entries.push((bj + 3 + a, -sw));
            block.push_row(r[a], (i, Some(j)), entries);
        }
    }
    block
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{Frame, Intrinsics};
    use crate::graph::{build_graph, exp_so3, GraphConfig};

    fn flat_setup(depth: f64) -> (Frame, DeformGraph, CameraPair) {
        let k = Intrinsics::new(150.0, 150.0, 79.5, 59.5, 160, 120).unwrap();
        let f = Frame::new(vec![100; 3 * 160 * 120], vec![depth; 160 * 120], k, "flat").unwrap();
        let g = build_graph(&f, &GraphConfig::default(), None).unwrap();
        (f, g, CameraPair { src: k, tgt: k })
    }

    fn smooth_features(w: usize, h: usize) -> NodeGrid {
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.push((0.6 * x as f64).sin() + 0.2 * y as f64);
            }
        }
        NodeGrid::new(w, h, 1, data, vec![true; w * h]).unwrap()
    }

    #[test]
    fn constant_features_give_zero_residuals() {
        let (_, g, cams) = flat_setup(1.0);
        let f = NodeGrid::new(16, 12, 2, vec![0.5; 16 * 12 * 2], vec![true; 192]).unwrap();
        let depth = vec![1.0; 192];
        let b = feature_residuals(&g, &f, &f, &depth, &cams, 1.0).unwrap();
        assert_eq!(b.len(), 2 * 192);
        assert!(b.r.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn self_alignment_has_zero_residual_but_live_jacobian() {
        let (_, g, cams) = flat_setup(1.0);
        let f = smooth_features(16, 12);
        let depth = vec![1.0; 192];
        let b = feature_residuals(&g, &f, &f, &depth, &cams, 1.0).unwrap();
        assert!(b.r.iter().all(|r| r.abs() < 1e-12));
        let (_, vals) = b.jacobian_row(20);
        assert!(vals.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn feature_resolution_must_match_graph() {
        let (_, g, cams) = flat_setup(1.0);
        let f = smooth_features(8, 6);
        assert!(matches!(
            feature_residuals(&g, &f, &f, &[1.0; 192], &cams, 1.0),
            Err(Error::ResolutionMismatch { .. })
        ));
    }

    #[test]
    fn flat_plane_pushed_back() {
        let (_, mut g, cams) = flat_setup(1.0);
        let ds = NodeGrid::from_depth(16, 12, vec![1.0; 192]).unwrap();
        let depth = vec![1.0; 192];
        let b = geometric_residuals(&g, &ds, &depth, &cams, 0.5).unwrap();
        assert!(b.r.iter().all(|r| r.abs() < 1e-15));
        g.trans.iter_mut().for_each(|t| *t = Vector3::new(0.0, 0.0, 0.1));
        let b = geometric_residuals(&g, &ds, &depth, &cams, 0.5).unwrap();
        assert!(!b.is_empty());
        for r in &b.r {
            assert!((r + 0.1 * 0.5f64.sqrt()).abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn out_of_bounds_rows_are_dropped() {
        let (_, mut g, cams) = flat_setup(1.0);
        let f = smooth_features(16, 12);
        let depth = vec![1.0; 192];
        // shifting right pushes the last node column off the grid
        g.trans.iter_mut().for_each(|t| *t = Vector3::new(0.02, 0.0, 0.0));
        let b = feature_residuals(&g, &f, &f, &depth, &cams, 1.0).unwrap();
        assert_eq!(b.len(), 192 - 12);
        assert!(b.row_nodes.iter().all(|(i, _)| i % 16 != 15));
    }

    #[test]
    fn arap_vanishes_at_rest_and_under_rigid_motion() {
        let (_, mut g, _) = flat_setup(1.2);
        assert_eq!(arap_residuals(&g, 40.0).energy(), 0.0);
        g.trans.iter_mut().for_each(|t| *t = Vector3::new(0.3, -0.1, 0.05));
        assert!(arap_residuals(&g, 40.0).energy() < 1e-25);
        let q = exp_so3(&Vector3::new(0.2, -0.4, 0.3));
        for i in 0..g.node_count() {
            g.rot[i] = q;
            g.trans[i] = q * g.node_pos[i] - g.node_pos[i];
        }
        assert!(arap_residuals(&g, 40.0).energy() < 1e-25);
        g.trans[40].x += 0.01;
        assert!(arap_residuals(&g, 40.0).energy() > 1e-4);
    }
}
