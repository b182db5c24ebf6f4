//! Deformation graph: a uniform `w x h` lattice of 6-DOF nodes anchored on the
//! target image, with node validity and 8-neighbor edge masks.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::frames::Frame;
use crate::{Error, Result};

/// Degrees of freedom per node: 3 rotation-increment slots, then 3 translation slots.
pub const NODE_DOF: usize = 6;

/// Neighbor offsets `(dx, dy)` in edge-slot order.
pub const NEIGHBOR_OFFSETS: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Slot index of the reverse edge.
#[inline]
pub fn opposite_slot(k: usize) -> usize {
    7 - k
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub w: usize,
    pub h: usize,
    /// Nodes deeper than this (meters) are invalid.
    pub max_depth: f64,
    /// Depth jump (meters) inside the 3x3 anchor window that marks an occlusion boundary.
    pub discontinuity_thresh: f64,
    /// Edges longer than this (meters, rest pose) are dropped.
    pub edge_len_thresh: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            w: 16,
            h: 12,
            max_depth: 2.0,
            discontinuity_thresh: 0.1,
            edge_len_thresh: 0.3,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || self.h == 0 {
            return Err(Error::InvalidConfig("graph resolution must be positive".into()));
        }
        for (name, v) in [
            ("max_depth", self.max_depth),
            ("discontinuity_thresh", self.discontinuity_thresh),
            ("edge_len_thresh", self.edge_len_thresh),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Affine map between node grid coordinates and image pixels.
///
/// Node `(i, j)` sits at pixel `(ox + sx * i, oy + sy * j)` with `sx = width / w`
/// and `ox = floor(sx / 2)`, so nodes land on integer pixel centers whenever
/// the image size is a multiple of the grid size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    pub w: usize,
    pub h: usize,
    pub width: usize,
    pub height: usize,
    pub sx: f64,
    pub sy: f64,
    pub ox: f64,
    pub oy: f64,
}

impl Lattice {
    pub fn new(w: usize, h: usize, width: usize, height: usize) -> Result<Self> {
        if w == 0 || h == 0 || w > width || h > height {
            return Err(Error::GridTooLarge { w, h, width, height });
        }
        let sx = width as f64 / w as f64;
        let sy = height as f64 / h as f64;
        Ok(Lattice {
            w,
            h,
            width,
            height,
            sx,
            sy,
            ox: (sx / 2.0).floor(),
            oy: (sy / 2.0).floor(),
        })
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.w * self.h
    }

    #[inline]
    pub fn node_pixel(&self, i: usize) -> Vector2<f64> {
        let (x, y) = (i % self.w, i / self.w);
        Vector2::new(self.ox + self.sx * x as f64, self.oy + self.sy * y as f64)
    }

    /// Nearest integer pixel to the node anchor.
    #[inline]
    pub fn anchor(&self, i: usize) -> (usize, usize) {
        let p = self.node_pixel(i);
        (
            (p.x.round() as usize).min(self.width - 1),
            (p.y.round() as usize).min(self.height - 1),
        )
    }

    #[inline]
    pub fn to_grid(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.ox) / self.sx, (pixel.y - self.oy) / self.sy)
    }

    /// Diagonal of d(grid)/d(pixel).
    #[inline]
    pub fn grid_per_pixel(&self) -> Vector2<f64> {
        Vector2::new(1.0 / self.sx, 1.0 / self.sy)
    }

    #[inline]
    pub fn neighbor(&self, i: usize, slot: usize) -> Option<usize> {
        let (dx, dy) = NEIGHBOR_OFFSETS[slot];
        let x = (i % self.w) as i64 + dx as i64;
        let y = (i / self.w) as i64 + dy as i64;
        if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            None
        } else {
            Some(y as usize * self.w + x as usize)
        }
    }

    /// Node-resolution depth sampled at the anchors of `frame`.
    pub fn sample_depth(&self, frame: &Frame) -> Vec<f64> {
        (0..self.node_count())
            .map(|i| {
                let (x, y) = self.anchor(i);
                frame.depth_at(x, y)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeformGraph {
    pub lattice: Lattice,
    pub node_pixel: Vec<Vector2<f64>>,
    /// Rest positions in the target camera frame (meters); zero for nodes without depth.
    pub node_pos: Vec<Vector3<f64>>,
    pub rot: Vec<Matrix3<f64>>,
    pub trans: Vec<Vector3<f64>>,
    pub node_mask: Vec<bool>,
    /// `w * h * 8` flags, slot order as in [`NEIGHBOR_OFFSETS`].
    pub edge_mask: Vec<bool>,
}

impl DeformGraph {
    #[inline]
    pub fn w(&self) -> usize {
        self.lattice.w
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.lattice.h
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.lattice.node_count()
    }

    #[inline]
    pub fn state_dim(&self) -> usize {
        NODE_DOF * self.node_count()
    }

    pub fn valid_count(&self) -> usize {
        self.node_mask.iter().filter(|v| **v).count()
    }

    #[inline]
    pub fn edge(&self, i: usize, slot: usize) -> bool {
        self.edge_mask[8 * i + slot]
    }

    /// Valid directed edges `(i, j)` in ascending `(i, slot)` order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |i| {
            (0..8).filter_map(move |k| {
                if self.edge(i, k) {
                    self.lattice.neighbor(i, k).map(|j| (i, j))
                } else {
                    None
                }
            })
        })
    }

    /// Deformed node positions `node_pos + trans`.
    pub fn deformed_positions(&self) -> Vec<Vector3<f64>> {
        self.node_pos.iter().zip(&self.trans).map(|(p, t)| p + t).collect()
    }

    /// Resets every node to the identity transform.
    pub fn reset_motion(&mut self) {
        self.rot.iter_mut().for_each(|r| *r = Matrix3::identity());
        self.trans.iter_mut().for_each(|t| *t = Vector3::zeros());
    }

    /// State vector with zero rotation increments and the current translations.
    pub fn pack_state(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.state_dim()];
        for (i, t) in self.trans.iter().enumerate() {
            x[NODE_DOF * i + 3..NODE_DOF * i + 6].copy_from_slice(t.as_slice());
        }
        x
    }

    /// Retracts a state increment: `R <- exp([w]x) R`, `t <- t + dt` for valid nodes.
    pub fn apply_increment(&self, delta: &[f64]) -> Result<DeformGraph> {
        let mut g = self.clone();
        g.apply_increment_in_place(delta, 1.0)?;
        Ok(g)
    }

    pub fn apply_increment_in_place(&mut self, delta: &[f64], scale: f64) -> Result<()> {
        if delta.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: delta.len(),
            });
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(delta.iter().position(|v| !v.is_finite())));
        }
        for i in 0..self.node_count() {
            if !self.node_mask[i] {
                continue;
            }
            let d = &delta[NODE_DOF * i..NODE_DOF * i + NODE_DOF];
            let omega = Vector3::new(d[0], d[1], d[2]) * scale;
            let r = exp_so3(&omega) * self.rot[i];
            self.rot[i] = if orthonormality_error(&r) > 1e-12 {
                reorthonormalize(&r)
            } else {
                r
            };
            self.trans[i] += Vector3::new(d[3], d[4], d[5]) * scale;
        }
        Ok(())
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            w: self.w(),
            h: self.h(),
            image_width: self.lattice.width,
            image_height: self.lattice.height,
            rot: self
                .rot
                .iter()
                .map(|r| {
                    let mut a = [0.0; 9];
                    for row in 0..3 {
                        for col in 0..3 {
                            a[3 * row + col] = r[(row, col)];
                        }
                    }
                    a
                })
                .collect(),
            trans: self.trans.iter().map(|t| [t.x, t.y, t.z]).collect(),
            node_mask: self.node_mask.clone(),
            edge_mask: self.edge_mask.clone(),
            node_pixel: self.node_pixel.iter().map(|p| [p.x, p.y]).collect(),
            node_pos: self.node_pos.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }

    pub fn from_json(j: &GraphJson) -> Result<Self> {
        let lattice = Lattice::new(j.w, j.h, j.image_width, j.image_height)?;
        let n = lattice.node_count();
        for (name, len, want) in [
            ("rot", j.rot.len(), n),
            ("trans", j.trans.len(), n),
            ("node_mask", j.node_mask.len(), n),
            ("edge_mask", j.edge_mask.len(), 8 * n),
            ("node_pixel", j.node_pixel.len(), n),
            ("node_pos", j.node_pos.len(), n),
        ] {
            if len != want {
                return Err(Error::format(format!("graph json: {name} has {len} entries, expected {want}")));
            }
        }
        Ok(DeformGraph {
            lattice,
            node_pixel: j.node_pixel.iter().map(|p| Vector2::new(p[0], p[1])).collect(),
            node_pos: j.node_pos.iter().map(|p| Vector3::from_row_slice(p)).collect(),
            rot: j.rot.iter().map(|r| Matrix3::from_row_slice(r)).collect(),
            trans: j.trans.iter().map(|t| Vector3::from_row_slice(t)).collect(),
            node_mask: j.node_mask.clone(),
            edge_mask: j.edge_mask.clone(),
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(&self.to_json())?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let j: GraphJson = serde_json::from_str(&s).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        Self::from_json(&j)
    }
}

/// Serialized graph state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub w: usize,
    pub h: usize,
    pub image_width: usize,
    pub image_height: usize,
    /// Row-major 3x3 per node.
    pub rot: Vec<[f64; 9]>,
    pub trans: Vec<[f64; 3]>,
    pub node_mask: Vec<bool>,
    pub edge_mask: Vec<bool>,
    pub node_pixel: Vec<[f64; 2]>,
    pub node_pos: Vec<[f64; 3]>,
}

/// Builds the graph on the target frame. `foreground`, when given, is a
/// row-major `H x W` mask; background nodes are invalid.
pub fn build_graph(target: &Frame, cfg: &GraphConfig, foreground: Option<&[bool]>) -> Result<DeformGraph> {
    cfg.validate()?;
    let lattice = Lattice::new(cfg.w, cfg.h, target.width(), target.height())?;
    if let Some(m) = foreground {
        if m.len() != target.depth.len() {
            return Err(Error::DimensionMismatch {
                expected: target.depth.len(),
                got: m.len(),
            });
        }
    }
    let n = lattice.node_count();
    let k = &target.intrinsics;
    let mut node_pixel = Vec::with_capacity(n);
    let mut node_pos = Vec::with_capacity(n);
    let mut node_mask = Vec::with_capacity(n);
    for i in 0..n {
        let px = lattice.node_pixel(i);
        let (ax, ay) = lattice.anchor(i);
        let d = target.depth_at(ax, ay);
        let foreground_ok = foreground.map_or(true, |m| m[ay * target.width() + ax]);
        let valid = foreground_ok
            && d > 0.0
            && d <= cfg.max_depth
            && !near_discontinuity(target, ax, ay, d, cfg.discontinuity_thresh);
        node_pixel.push(px);
        node_pos.push(if d > 0.0 {
            k.back_project(px, d)?
        } else {
            Vector3::zeros()
        });
        node_mask.push(valid);
    }
    let mut edge_mask = vec![false; 8 * n];
    for i in 0..n {
        if !node_mask[i] {
            continue;
        }
        for slot in 0..8 {
            if let Some(j) = lattice.neighbor(i, slot) {
                edge_mask[8 * i + slot] =
                    node_mask[j] && (node_pos[i] - node_pos[j]).norm() <= cfg.edge_len_thresh;
            }
        }
    }
    Ok(DeformGraph {
        lattice,
        node_pixel,
        node_pos,
        rot: vec![Matrix3::identity(); n],
        trans: vec![Vector3::zeros(); n],
        node_mask,
        edge_mask,
    })
}

fn near_discontinuity(frame: &Frame, ax: usize, ay: usize, d: f64, thresh: f64) -> bool {
    let x0 = ax.saturating_sub(1);
    let y0 = ay.saturating_sub(1);
    let x1 = (ax + 1).min(frame.width() - 1);
    let y1 = (ay + 1).min(frame.height() - 1);
    (y0..=y1).any(|y| (x0..=x1).any(|x| (frame.depth_at(x, y) - d).abs() > thresh))
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map so(3) -> SO(3) (Rodrigues).
pub fn exp_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// `max |R^T R - I|`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    Rotation3::from_matrix_eps(r, 1e-15, 20, Rotation3::identity()).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::Intrinsics;
    use std::f64::consts::FRAC_PI_2;

    fn plane(width: usize, height: usize, depth: impl Fn(usize, usize) -> f64) -> Frame {
        let k = Intrinsics::new(100.0, 100.0, width as f64 / 2.0, height as f64 / 2.0, width, height).unwrap();
        let mut d = Vec::new();
        for y in 0..height {
            for x in 0..width {
                d.push(depth(x, y));
            }
        }
        Frame::new(vec![128; 3 * width * height], d, k, "plane").unwrap()
    }

    #[test]
    fn constant_plane_keeps_every_node() {
        let f = plane(160, 120, |_, _| 1.0);
        let g = build_graph(&f, &GraphConfig::default(), None).unwrap();
        assert_eq!(g.valid_count(), 192);
        assert_eq!(g.node_pixel[0], Vector2::new(5.0, 5.0));
        assert_eq!(g.node_pixel[17], Vector2::new(15.0, 15.0));
        // interior nodes have all 8 edges
        assert!((0..8).all(|k| g.edge(17, k)));
        // symmetry
        for i in 0..g.node_count() {
            for k in 0..8 {
                if let Some(j) = g.lattice.neighbor(i, k) {
                    assert_eq!(g.edge(i, k), g.edge(j, opposite_slot(k)));
                }
            }
        }
    }

    #[test]
    fn zero_depth_node_loses_its_edges() {
        let f = plane(160, 120, |x, y| if (10..=20).contains(&x) && (10..=20).contains(&y) { 0.0 } else { 1.0 });
        let g = build_graph(&f, &GraphConfig::default(), None).unwrap();
        let i = 16 + 1; // node (1, 1) at pixel (15, 15)
        assert!(!g.node_mask[i]);
        assert!((0..8).all(|k| !g.edge(i, k)));
        for k in 0..8 {
            let j = g.lattice.neighbor(i, k).unwrap();
            assert!(!g.edge(j, opposite_slot(k)));
        }
    }

    #[test]
    fn half_planes_invalidate_only_the_seam() {
        // seam between pixel columns 44 and 45: node column 4 sits at x = 45
        let seam = 45;
        let f = plane(160, 120, |x, _| if x < seam { 1.0 } else { 2.0 });
        let cfg = GraphConfig::default();
        let g = build_graph(&f, &cfg, None).unwrap();
        // brute-force rescan of every node's 3x3 neighborhood
        let mut expected = 0;
        for i in 0..g.node_count() {
            let (ax, ay) = g.lattice.anchor(i);
            let d0 = f.depth_at(ax, ay);
            let mut broken = false;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (x, y) = (ax as i64 + dx, ay as i64 + dy);
                    if x >= 0 && y >= 0 && x < 160 && y < 120 && (f.depth_at(x as usize, y as usize) - d0).abs() > 0.1 {
                        broken = true;
                    }
                }
            }
            if broken {
                expected += 1;
                assert!(!g.node_mask[i]);
            }
        }
        assert_eq!(expected, 12);
        assert_eq!(g.valid_count(), 192 - expected);
    }

    #[test]
    fn background_mask_and_depth_cutoff() {
        let f = plane(160, 120, |x, _| if x < 80 { 1.0 } else { 2.5 });
        let mut fg = vec![true; 160 * 120];
        fg[5 * 160 + 5] = false;
        let g = build_graph(&f, &GraphConfig::default(), Some(&fg)).unwrap();
        assert!(!g.node_mask[0]);
        assert!(!g.node_mask[15]);
        assert!(g.node_mask[1]);
    }

    #[test]
    fn long_edges_are_cut() {
        let f = plane(160, 120, |_, _| 1.0);
        let cfg = GraphConfig {
            edge_len_thresh: 0.12,
            ..Default::default()
        };
        // node spacing 10 px at f = 100, depth 1 -> 0.1 m; diagonals 0.141 m
        let g = build_graph(&f, &cfg, None).unwrap();
        assert!(g.edge(17, 1) && g.edge(17, 3));
        assert!(!g.edge(17, 0) && !g.edge(17, 7));
    }

    #[test]
    fn grid_larger_than_image_rejected() {
        let f = plane(8, 8, |_, _| 1.0);
        assert!(matches!(
            build_graph(&f, &GraphConfig::default(), None),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn pack_layout() {
        let f = plane(160, 120, |_, _| 1.0);
        let mut g = build_graph(&f, &GraphConfig::default(), None).unwrap();
        assert_eq!(g.pack_state(), vec![0.0; 1152]);
        g.trans[0] = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(&g.pack_state()[3..6], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn increments_round_trip_through_pack() {
        let f = plane(160, 120, |_, _| 1.0);
        let g = build_graph(&f, &GraphConfig::default(), None).unwrap();
        let delta: Vec<f64> = (0..g.state_dim()).map(|i| ((i * 37 % 101) as f64 - 50.0) * 1e-3).collect();
        let moved = g.apply_increment(&delta).unwrap();
        let packed = moved.pack_state();
        for i in 0..g.node_count() {
            for a in 0..3 {
                assert_eq!(packed[6 * i + 3 + a], delta[6 * i + 3 + a]);
                assert_eq!(packed[6 * i + a], 0.0);
            }
        }
        assert_eq!(g.apply_increment(&vec![0.0; g.state_dim()]).unwrap(), g);
        assert!(matches!(g.apply_increment(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = exp_so3(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        assert!((r * Vector3::x() - Vector3::y()).abs().max() < 1e-12);
        // closed form Rodrigues for a general axis
        let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
        let theta = 0.7;
        let expect = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), theta);
        assert!((exp_so3(&(axis * theta)) - expect.matrix()).abs().max() < 1e-14);
    }

    #[test]
    fn small_increments_compose_to_first_order() {
        let a = Vector3::new(1e-3, -2e-3, 0.5e-3);
        let b = Vector3::new(-0.7e-3, 0.4e-3, 1.1e-3);
        let err = (exp_so3(&b) * exp_so3(&a) - exp_so3(&(a + b))).abs().max();
        // BCH: difference is 0.5 [b, a] = O(|a||b|)
        assert!(err < 2.0 * a.norm() * b.norm(), "{err}");
        assert!(err > 0.0);
    }

    #[test]
    fn rotations_stay_orthonormal() {
        let f = plane(160, 120, |_, _| 1.0);
        let mut g = build_graph(&f, &GraphConfig::default(), None).unwrap();
        let mut seed = 7u64;
        for _ in 0..300 {
            let delta: Vec<f64> = (0..g.state_dim())
                .map(|_| {
                    seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.8
                })
                .collect();
            g.apply_increment_in_place(&delta, 1.0).unwrap();
        }
        for r in &g.rot {
            assert!(orthonormality_error(r) < 1e-9);
            assert!(r.determinant() > 0.0);
        }
    }

    #[test]
    fn json_round_trip() {
        let f = plane(160, 120, |x, _| if x < 45 { 1.0 } else { 2.0 });
        let mut g = build_graph(&f, &GraphConfig::default(), None).unwrap();
        g.trans[3] = Vector3::new(0.1, -0.2, 1.0 / 3.0);
        g.rot[3] = exp_so3(&Vector3::new(0.1, 0.2, 0.3));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.json");
        g.save_json(&p).unwrap();
        let h = DeformGraph::load_json(&p).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn build_is_deterministic() {
        let f = plane(160, 120, |x, y| 1.0 + 0.3 * ((x * y) % 7) as f64 / 7.0);
        let a = build_graph(&f, &GraphConfig::default(), None).unwrap();
        let b = build_graph(&f, &GraphConfig::default(), None).unwrap();
        assert_eq!(a, b);
    }
}
