//! Calibrated RGB-D frames, pinhole camera operations and file I/O.
//!
//! On-disk layout of a frame directory: `color.png` (8-bit RGB),
//! `depth.png` (16-bit grayscale, units of `depth_scale` meters) and
//! `intrinsics.json`.

mod camera;
mod feature;
mod io;

pub use camera::{back_project, project, warp_pixel, Intrinsics};
pub use feature::FeatureMap;
pub use io::{load_frame, load_frame_dir, read_depth_png, save_frame_dir, write_depth_png};

use crate::{Error, Result};

/// A color + depth image pair. Depth is in meters; `0.0` marks invalid depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// Row-major RGB, 3 bytes per pixel.
    pub color: Vec<u8>,
    /// Row-major depth in meters.
    pub depth: Vec<f64>,
    pub intrinsics: Intrinsics,
    pub id: String,
}

impl Frame {
    pub fn new(color: Vec<u8>, depth: Vec<f64>, intrinsics: Intrinsics, id: impl Into<String>) -> Result<Self> {
        intrinsics.validate()?;
        let n = intrinsics.width * intrinsics.height;
        if color.len() != 3 * n {
            return Err(Error::DimensionMismatch {
                expected: 3 * n,
                got: color.len(),
            });
        }
        if depth.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: depth.len(),
            });
        }
        if depth.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidConfig("depth values must be finite and >= 0".into()));
        }
        Ok(Frame {
            color,
            depth,
            intrinsics,
            id: id.into(),
        })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    #[inline]
    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width() + x]
    }

    #[inline]
    pub fn rgb_at(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width() + x);
        [self.color[i], self.color[i + 1], self.color[i + 2]]
    }

    /// Grayscale intensity in [0, 1] (unweighted channel mean).
    #[inline]
    pub fn intensity_at(&self, x: usize, y: usize) -> f64 {
        let [r, g, b] = self.rgb_at(x, y);
        (r as f64 + g as f64 + b as f64) / (3.0 * 255.0)
    }

    pub fn intensity(&self) -> Vec<f64> {
        let (w, h) = (self.width(), self.height());
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                out.push(self.intensity_at(x, y));
            }
        }
        out
    }
}
