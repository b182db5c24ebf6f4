//! Synthetic deforming scenes with exact node ground truth, and the
//! evaluation metrics used against them.
//!
//! The target frame images an analytic height field. Every surface point
//! `X(u, v)` seen at target pixel `(u, v)` moves by a smooth displacement
//! `d(u, v)`; the source frame images the moved surface. Source pixels are
//! rendered by inverting that map per pixel, so the ground-truth flow of a
//! node is exactly `d` at its anchor pixel.

mod eval;
mod export;
mod field;

pub use eval::{covisibility, evaluate, evaluate_graph, pcg_loss, photo_consistency_error, EvalReport, Motion, VISIBILITY_TOL};
pub use export::{load_gt_flow, load_scene, save_scene, SceneFiles, SceneMeta};
pub use field::{DisplacementField, HeightField, Texture};

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frames::{Frame, Intrinsics};
use crate::graph::{build_graph, DeformGraph, GraphConfig};
use crate::par;
use crate::{Error, Result};

/// Frame-jump level; sets the deformation magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JumpLevel {
    J2,
    J4,
    J8,
    J16,
}

impl JumpLevel {
    pub const ALL: [JumpLevel; 4] = [JumpLevel::J2, JumpLevel::J4, JumpLevel::J8, JumpLevel::J16];

    /// Target mean node displacement in meters.
    pub fn mean_displacement(self) -> f64 {
        match self {
            JumpLevel::J2 => 0.01,
            JumpLevel::J4 => 0.02,
            JumpLevel::J8 => 0.04,
            JumpLevel::J16 => 0.08,
        }
    }

    pub fn frames(self) -> u32 {
        match self {
            JumpLevel::J2 => 2,
            JumpLevel::J4 => 4,
            JumpLevel::J8 => 8,
            JumpLevel::J16 => 16,
        }
    }
}

impl fmt::Display for JumpLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "J{}", self.frames())
    }
}

impl FromStr for JumpLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_start_matches(['J', 'j']) {
            "2" => Ok(JumpLevel::J2),
            "4" => Ok(JumpLevel::J4),
            "8" => Ok(JumpLevel::J8),
            "16" => Ok(JumpLevel::J16),
            _ => Err(Error::InvalidConfig(format!("unknown jump level {s:?}; expected 2, 4, 8 or 16"))),
        }
    }
}

/// How the surface moves between the frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionSpec {
    /// Random smooth field scaled to the jump level's mean displacement.
    Random,
    /// The same translation everywhere, ignoring the jump level.
    Translation([f64; 3]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Allowed target depth range in meters.
    pub depth_range: (f64, f64),
    pub bumps: usize,
    pub waves: usize,
    pub jump: JumpLevel,
    pub motion: MotionSpec,
    pub graph: GraphConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 160,
            height: 120,
            focal: 150.0,
            depth_range: (0.5, 2.0),
            bumps: 6,
            waves: 3,
            jump: JumpLevel::J2,
            motion: MotionSpec::Random,
            graph: GraphConfig::default(),
        }
    }
}

impl SceneConfig {
    pub fn with_jump(jump: JumpLevel) -> Self {
        SceneConfig {
            jump,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.depth_range;
        if !(lo >= 0.5 && hi <= 2.0 && lo < hi) {
            return Err(Error::InvalidConfig(format!("depth range {lo}..{hi} must lie within [0.5, 2.0] m")));
        }
        if self.width < 8 || self.height < 8 || !(self.focal > 0.0) {
            return Err(Error::InvalidConfig("scene image too small or focal length not positive".into()));
        }
        self.graph.validate()
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub seed: u64,
    pub config: SceneConfig,
    pub source: Frame,
    pub target: Frame,
    /// Ground-truth translation of every node, row-major node order.
    pub gt_flow: Vec<Vector3<f64>>,
    /// Graph on the target with the generating motion.
    pub gt_graph: DeformGraph,
    /// Displacement of the surface point at every target pixel.
    pub dense_flow: Vec<Vector3<f64>>,
    pub surface: HeightField,
    pub texture: Texture,
    pub displacement: DisplacementField,
}

impl SyntheticScene {
    pub fn jump(&self) -> JumpLevel {
        self.config.jump
    }

    /// Mean `|gt_flow|` over valid nodes, the EPE of the zero-motion estimate.
    pub fn zero_motion_epe(&self) -> f64 {
        let valid: Vec<f64> = self
            .gt_flow
            .iter()
            .zip(&self.gt_graph.node_mask)
            .filter(|(_, m)| **m)
            .map(|(t, _)| t.norm())
            .collect();
        valid.iter().sum::<f64>() / valid.len().max(1) as f64
    }
}

const INVERT_ITERS: usize = 100;
const INVERT_TOL: f64 = 1e-10;

fn to_u8(x: f64) -> u8 {
    (x * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let k = cfg.intrinsics()?;
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface = HeightField::random(&mut rng, w, h, cfg.bumps, cfg.depth_range);
    let texture = Texture::new(seed ^ 0x5EED_7E47);
    let lattice = crate::graph::Lattice::new(cfg.graph.w, cfg.graph.h, w, h)?;

    let surface_point = |u: f64, v: f64| -> Result<Vector3<f64>> { k.back_project(Vector2::new(u, v), surface.depth(u, v)) };
    let displacement = match cfg.motion {
        MotionSpec::Translation(t) => DisplacementField::constant(t, w, h),
        MotionSpec::Random => {
            let center = surface_point(k.cx, k.cy)?;
            let raw = DisplacementField::random(&mut rng, w, h, center, cfg.waves);
            let mean = (0..lattice.node_count())
                .map(|i| {
                    let p = lattice.node_pixel(i);
                    surface_point(p.x, p.y).map(|x| raw.at(p.x, p.y, &x).norm())
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .sum::<f64>()
                / lattice.node_count() as f64;
            raw.scaled(cfg.jump.mean_displacement() / mean)
        }
    };

    // Target: the height field itself.
    let mut t_color = Vec::with_capacity(3 * w * h);
    let mut t_depth = Vec::with_capacity(w * h);
    let mut dense_flow = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64, y as f64);
            let z = surface.depth(u, v);
            if !(z >= cfg.depth_range.0 && z <= cfg.depth_range.1) {
                return Err(Error::DegenerateScene(format!("surface depth {z} outside the configured range")));
            }
            t_depth.push(z);
            t_color.extend(texture.rgb(u, v).map(to_u8));
            dense_flow.push(displacement.at(u, v, &surface_point(u, v)?));
        }
    }

    // Source: per pixel, solve project(X(u, v) + d(u, v)) = s for (u, v).
    let rows = par::map_range(h, |y| {
        let mut color = Vec::with_capacity(3 * w);
        let mut depth = Vec::with_capacity(w);
        for x in 0..w {
            let s = Vector2::new(x as f64, y as f64);
            match invert_pixel(&s, &surface_point, &displacement, &k) {
                Some((uv, z)) if uv.x >= 0.0 && uv.y >= 0.0 && uv.x <= (w - 1) as f64 && uv.y <= (h - 1) as f64 => {
                    color.extend(texture.rgb(uv.x, uv.y).map(to_u8));
                    depth.push(z);
                }
                _ => {
                    color.extend([0, 0, 0]);
                    depth.push(0.0);
                }
            }
        }
        (color, depth)
    });
    let mut s_color = Vec::with_capacity(3 * w * h);
    let mut s_depth = Vec::with_capacity(w * h);
    for (c, d) in rows {
        s_color.extend(c);
        s_depth.extend(d);
    }
    if s_depth.iter().all(|d| *d == 0.0) {
        return Err(Error::DegenerateScene("no source pixel sees the moved surface".into()));
    }

    let target = Frame::new(t_color, t_depth, k, format!("synth-{seed}-target"))?;
    let source = Frame::new(s_color, s_depth, k, format!("synth-{seed}-source"))?;
    let mut gt_graph = build_graph(&target, &cfg.graph, None)?;
    let gt_flow: Vec<Vector3<f64>> = gt_graph
        .node_pixel
        .iter()
        .zip(&gt_graph.node_pos)
        .map(|(p, x)| displacement.at(p.x, p.y, x))
        .collect();
    gt_graph.trans = gt_flow.clone();
    gt_graph.rot = node_rotations(&gt_graph);

    Ok(SyntheticScene {
        seed,
        config: cfg.clone(),
        source,
        target,
        gt_flow,
        gt_graph,
        dense_flow,
        surface,
        texture,
        displacement,
    })
}

/// Fixed-point inversion of the target-to-source pixel map at source pixel
/// `s`. Returns the target coordinate and the moved depth.
fn invert_pixel<F>(s: &Vector2<f64>, surface_point: &F, d: &DisplacementField, k: &Intrinsics) -> Option<(Vector2<f64>, f64)>
where
    F: Fn(f64, f64) -> Result<Vector3<f64>>,
{
    let mut uv = *s;
    for _ in 0..INVERT_ITERS {
        let x = surface_point(uv.x, uv.y).ok()?;
        let moved = x + d.at(uv.x, uv.y, &x);
        let px = k.project(&moved).ok()?;
        let err = s - px;
        if err.norm() < INVERT_TOL {
            return Some((uv, moved.z));
        }
        uv += err;
        if !uv.x.is_finite() || !uv.y.is_finite() {
            return None;
        }
    }
    None
}

/// Best-fit rotation of each valid node's neighbourhood under its motion.
fn node_rotations(g: &DeformGraph) -> Vec<Matrix3<f64>> {
    (0..g.node_count())
        .map(|i| {
            let mut cov = Matrix3::zeros();
            let mut count = 0;
            for slot in 0..8 {
                if !g.edge(i, slot) {
                    continue;
                }
                let j = g.lattice.neighbor(i, slot).expect("edge implies neighbour");
                let a = g.node_pos[j] - g.node_pos[i];
                let b = (g.node_pos[j] + g.trans[j]) - (g.node_pos[i] + g.trans[i]);
                cov += b * a.transpose();
                count += 1;
            }
            if count < 2 {
                return Matrix3::identity();
            }
            let svd = cov.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mut fix = Matrix3::identity();
            fix[(2, 2)] = (u * vt).determinant().signum();
            u * fix * vt
        })
        .collect()
}
