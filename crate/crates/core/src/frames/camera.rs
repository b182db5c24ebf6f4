use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pinhole intrinsics. Integer pixel coordinates sit at pixel centers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Meters per stored depth unit.
    pub depth_scale: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            depth_scale: 0.001,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn with_depth_scale(mut self, depth_scale: f64) -> Result<Self> {
        self.depth_scale = depth_scale;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
            && self.depth_scale > 0.0
            && self.depth_scale.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn back_project(&self, pixel: Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        back_project(pixel, depth, self)
    }

    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>> {
        project(point, self)
    }

    /// Jacobian of [`project`] with respect to the 3D point.
    pub fn project_jacobian(&self, point: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / point.z;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * point.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * point.y * iz * iz,
        )
    }
}

pub fn back_project(pixel: Vector2<f64>, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(Vector3::new(
        (pixel.x - k.cx) * depth / k.fx,
        (pixel.y - k.cy) * depth / k.fy,
        depth,
    ))
}

pub fn project(point: &Vector3<f64>, k: &Intrinsics) -> Result<Vector2<f64>> {
    if !(point.z > 0.0) {
        return Err(Error::BehindCamera(point.z));
    }
    Ok(Vector2::new(
        k.fx * point.x / point.z + k.cx,
        k.fy * point.y / point.z + k.cy,
    ))
}

/// Back-projects `pixel` through the target camera, translates by `t` and
/// projects into the source camera.
pub fn warp_pixel(
    pixel: Vector2<f64>,
    depth: f64,
    t: &Vector3<f64>,
    k_src: &Intrinsics,
    k_tgt: &Intrinsics,
) -> Result<Vector2<f64>> {
    let p = back_project(pixel, depth, k_tgt)? + t;
    project(&p, k_src)
}
