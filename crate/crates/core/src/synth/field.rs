//! Analytic fields behind a synthetic scene: the target height field, the
//! surface texture and the smooth 3D displacement field. All are functions
//! of continuous target pixel coordinates.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Sum of Gaussian bumps on a constant base depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightField {
    pub base: f64,
    /// `(u, v, sigma, amplitude)` in pixels and meters.
    pub bumps: Vec<[f64; 4]>,
}

impl HeightField {
    pub fn random(rng: &mut ChaCha8Rng, width: usize, height: usize, count: usize, depth_range: (f64, f64)) -> Self {
        let (lo, hi) = depth_range;
        let span = hi - lo;
        let base = lo + span * rng.random_range(0.35..0.55);
        let scale = width.min(height) as f64;
        let bumps = (0..count)
            .map(|_| {
                [
                    rng.random_range(0.0..width as f64),
                    rng.random_range(0.0..height as f64),
                    rng.random_range(0.3..0.6) * scale,
                    rng.random_range(-0.1..0.1) * span,
                ]
            })
            .collect();
        HeightField { base, bumps }
    }

    pub fn depth(&self, u: f64, v: f64) -> f64 {
        self.base
            + self
                .bumps
                .iter()
                .map(|[bu, bv, s, a]| a * (-((u - bu).powi(2) + (v - bv).powi(2)) / (2.0 * s * s)).exp())
                .sum::<f64>()
    }
}

/// Multi-octave value noise, one independent lattice per color channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    /// `(period in pixels, amplitude)` per octave.
    pub octaves: Vec<(f64, f64)>,
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        Texture {
            seed,
            octaves: vec![(80.0, 0.5), (40.0, 0.35), (20.0, 0.15)],
        }
    }

    /// RGB in [0, 1].
    pub fn rgb(&self, u: f64, v: f64) -> [f64; 3] {
        let total: f64 = self.octaves.iter().map(|o| o.1).sum();
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, (period, amp)) in self.octaves.iter().enumerate() {
                acc += amp * self.lattice_noise(ch as u64, k as u64, u / period, v / period);
            }
            // Averaging octaves shrinks the spread around 0.5; stretch it back.
            *o = (0.5 + 2.0 * (acc / total - 0.5)).clamp(0.0, 1.0);
        }
        out
    }

    fn lattice_noise(&self, ch: u64, octave: u64, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (smooth(x - x0), smooth(y - y0));
        let (ix, iy) = (x0 as i64, y0 as i64);
        let c = |dx: i64, dy: i64| self.hash(ch, octave, ix + dx, iy + dy);
        let top = c(0, 0) + (c(1, 0) - c(0, 0)) * fx;
        let bottom = c(0, 1) + (c(1, 1) - c(0, 1)) * fx;
        top + (bottom - top) * fy
    }

    /// Uniform value in [0, 1] for a lattice point.
    fn hash(&self, ch: u64, octave: u64, x: i64, y: i64) -> f64 {
        let mut z = self.seed ^ ch.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ octave.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
        z ^= (x as u64).wrapping_mul(0x1656_67B1_9E37_79F9) ^ (y as u64).wrapping_mul(0x27D4_EB2F_1656_67C5);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }
}

#[inline]
fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// A translation, an infinitesimal rotation about `center` and a few
/// low-frequency plane waves over the image. The first two are isometric;
/// the waves bend and stretch the surface mildly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    pub offset: [f64; 3],
    /// Rotation vector `w`; contributes `w x (X - center)`.
    pub spin: [f64; 3],
    pub center: [f64; 3],
    /// `(cycles across width, cycles across height, phase, amplitude xyz)`.
    pub waves: Vec<(f64, f64, f64, [f64; 3])>,
    pub width: f64,
    pub height: f64,
}

impl DisplacementField {
    pub fn constant(t: [f64; 3], width: usize, height: usize) -> Self {
        DisplacementField {
            offset: t,
            spin: [0.0; 3],
            center: [0.0; 3],
            waves: Vec::new(),
            width: width as f64,
            height: height as f64,
        }
    }

    pub fn random(rng: &mut ChaCha8Rng, width: usize, height: usize, center: Vector3<f64>, waves: usize) -> Self {
        fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
        }
        let offset = unit(rng);
        let spin = unit(rng);
        let mut w = Vec::with_capacity(waves);
        for _ in 0..waves {
            let amp = unit(rng);
            w.push((
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.0..std::f64::consts::TAU),
                [WAVE_SHARE * amp[0], WAVE_SHARE * amp[1], WAVE_SHARE * amp[2]],
            ));
        }
        DisplacementField {
            offset,
            spin,
            center: [center.x, center.y, center.z],
            waves: w,
            width: width as f64,
            height: height as f64,
        }
    }

    /// Displacement of the surface point `x` imaged at target pixel `(u, v)`.
    pub fn at(&self, u: f64, v: f64, x: &Vector3<f64>) -> Vector3<f64> {
        let mut d = Vector3::from(self.offset) + Vector3::from(self.spin).cross(&(x - Vector3::from(self.center)));
        for (fu, fv, phase, amp) in &self.waves {
            let s = (std::f64::consts::TAU * (fu * u / self.width + fv * v / self.height) + phase).sin();
            d += Vector3::from(*amp) * s;
        }
        d
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.offset.iter_mut().for_each(|x| *x *= k);
        out.spin.iter_mut().for_each(|x| *x *= k);
        for w in &mut out.waves {
            w.3.iter_mut().for_each(|x| *x *= k);
        }
        out
    }
}

/// Wave amplitude relative to the unit translation.
const WAVE_SHARE: f64 = 0.2;
