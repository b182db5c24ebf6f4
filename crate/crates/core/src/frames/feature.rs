use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"NRFM";

/// A `w x h x c` grid of feature vectors, one per deformation-graph node.
/// Storage is row-major with the channel index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub w: usize,
    pub h: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(w: usize, h: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != w * h * c {
            return Err(Error::DimensionMismatch {
                expected: w * h * c,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("feature map contains non-finite values"));
        }
        Ok(FeatureMap { w, h, c, data })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        for d in [self.w, self.h, self.c] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::format("missing NRFM header"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (w, h, c) = (dim(0), dim(1), dim(2));
        let count = w
            .checked_mul(h)
            .and_then(|n| n.checked_mul(c))
            .ok_or_else(|| Error::format("NRFM dimensions overflow"))?;
        let payload = &bytes[16..];
        if Some(payload.len()) != count.checked_mul(4) {
            return Err(Error::format(format!(
                "NRFM header {w}x{h}x{c} expects {} payload bytes, found {}",
                count * 4,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureMap::new(w, h, c, data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}
