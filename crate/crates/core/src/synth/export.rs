//! Scene directories: `source/` and `target/` frame directories,
//! `gt_flow.json` (one `[x, y, z]` per node, row-major node order) and
//! `meta.json` (seed, jump level, generator configuration).

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{JumpLevel, SceneConfig, SyntheticScene};
use crate::frames::{load_frame_dir, save_frame_dir, Frame};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub jump_level: JumpLevel,
    pub config: SceneConfig,
}

/// A scene as read back from disk. Depth is quantized to the frame depth
/// scale.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFiles {
    pub source: Frame,
    pub target: Frame,
    pub gt_flow: Vec<Vector3<f64>>,
    pub meta: SceneMeta,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

fn write_parts(dir: &Path, source: &Frame, target: &Frame, gt_flow: &[Vector3<f64>], meta: &SceneMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_frame_dir(source, &dir.join("source"))?;
    save_frame_dir(target, &dir.join("target"))?;
    let flow: Vec<[f64; 3]> = gt_flow.iter().map(|t| [t.x, t.y, t.z]).collect();
    write_json(&dir.join("gt_flow.json"), &flow)?;
    write_json(&dir.join("meta.json"), meta)
}

pub fn save_scene(scene: &SyntheticScene, dir: &Path) -> Result<()> {
    let meta = SceneMeta {
        seed: scene.seed,
        jump_level: scene.config.jump,
        config: scene.config.clone(),
    };
    write_parts(dir, &scene.source, &scene.target, &scene.gt_flow, &meta)
}

impl SceneFiles {
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_parts(dir, &self.source, &self.target, &self.gt_flow, &self.meta)
    }
}

pub fn load_scene(dir: &Path) -> Result<SceneFiles> {
    let source = load_frame_dir(&dir.join("source"))?;
    let target = load_frame_dir(&dir.join("target"))?;
    let flow: Vec<[f64; 3]> = read_json(&dir.join("gt_flow.json"))?;
    let meta: SceneMeta = read_json(&dir.join("meta.json"))?;
    Ok(SceneFiles {
        source,
        target,
        gt_flow: flow.into_iter().map(Vector3::from).collect(),
        meta,
    })
}

/// Reads a bare `gt_flow.json`.
pub fn load_gt_flow(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let flow: Vec<[f64; 3]> = read_json(path)?;
    Ok(flow.into_iter().map(Vector3::from).collect())
}
