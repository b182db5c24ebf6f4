use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("graph {w}x{h} does not fit an image of {width}x{height}")]
    GridTooLarge {
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample ({u}, {v}) outside the grid")]
    OutOfBounds { u: f64, v: f64 },

    #[error("sample ({u}, {v}) touches an invalid cell")]
    InvalidCorner { u: f64, v: f64 },

    #[error("map resolution {got_w}x{got_h} does not match graph {w}x{h}")]
    ResolutionMismatch {
        w: usize,
        h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("PCG breakdown at iteration {iteration}: p'Ap = {curvature}")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("diagonal block of node {node} is not positive definite")]
    SingularBlock { node: usize },

    #[error("incomplete Cholesky failed after {attempts} diagonal boosts")]
    FactorizationFailed { attempts: usize },

    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("system too large for the dense solver: n = {0}")]
    TooLarge(usize),

    #[error("function returned a non-finite value at coordinate {0:?}")]
    NonFinite(Option<usize>),

    #[error("degenerate scene: {0}")]
    DegenerateScene(String),

    #[error("no covisible pixels")]
    NoCovisiblePixels,

    #[error("deformation graph has no valid nodes")]
    NoValidNodes,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for errors caused by bad user input (paths, files, configs)
    /// rather than internal numerical failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format(_)
                | Error::InvalidConfig(_)
                | Error::Json(_)
                | Error::GridTooLarge { .. }
                | Error::ResolutionMismatch { .. }
                | Error::DimensionMismatch { .. }
        )
    }
}
