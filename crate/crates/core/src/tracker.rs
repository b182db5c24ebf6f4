//! The Gauss-Newton loop: residuals, normal equations, a preconditioned CG
//! solve with a fixed iteration budget, and the exp-map state update.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::energy::{assemble_system, color_features, CameraPair, EnergyModel, NodeGrid, Weights};
use crate::frames::{FeatureMap, Frame};
use crate::graph::{build_graph, DeformGraph, GraphConfig, Lattice};
use crate::solver::{dot, dump_system, pcg_solve, Preconditioner, PreconditionerKind, SolveReport};
use crate::{Error, Result};

/// Times a non-finite step is halved before giving up.
const MAX_STEP_HALVINGS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Feature maps supplied by the caller (NRFM files).
    LoadedNrfm,
    /// Box-averaged image color at graph resolution.
    IntensityFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub gn_iters: usize,
    pub pcg_iters: usize,
    /// Relative residual at which PCG stops early.
    pub pcg_tol: f64,
    pub weights: Weights,
    pub preconditioner: PreconditionerKind,
    /// NRPC factor for loaded preconditioners: a file used for every
    /// iteration, or a directory holding `gn{k}.nrpc` per iteration.
    pub factor_path: Option<PathBuf>,
    pub feature_source: FeatureSource,
    /// Channels of the intensity fallback: 1 (gray) or 3 (RGB).
    pub fallback_channels: usize,
    pub graph: GraphConfig,
    /// Gauss-Newton rounds of depth-only refinement.
    pub refine_iters: usize,
    /// Where to write each iteration's system as NRAB, if anywhere.
    pub dump_dir: Option<PathBuf>,
    /// File-name prefix for dumped systems.
    pub dump_prefix: String,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            gn_iters: 3,
            pcg_iters: 10,
            pcg_tol: 1e-6,
            weights: Weights::default(),
            preconditioner: PreconditionerKind::IncompleteCholesky,
            factor_path: None,
            feature_source: FeatureSource::IntensityFallback,
            fallback_channels: 1,
            graph: GraphConfig::default(),
            refine_iters: 3,
            dump_dir: None,
            dump_prefix: String::new(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gn_iters == 0 || self.pcg_iters == 0 {
            return Err(Error::InvalidConfig("gn_iters and pcg_iters must be at least 1".into()));
        }
        if !(self.pcg_tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("pcg_tol {} must be >= 0", self.pcg_tol)));
        }
        if !matches!(self.fallback_channels, 1 | 3) {
            return Err(Error::InvalidConfig(format!("fallback_channels must be 1 or 3, got {}", self.fallback_channels)));
        }
        if self.preconditioner.is_loaded() && self.factor_path.is_none() {
            return Err(Error::InvalidConfig(format!("preconditioner {} needs factor_path", self.preconditioner)));
        }
        self.weights.validate()?;
        self.graph.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug)]
pub struct TrackingResult {
    pub graph: DeformGraph,
    /// Total energy before the first and after every iteration.
    pub energy_history: Vec<f64>,
    pub solve_reports: Vec<SolveReport>,
    /// `b^T delta` per iteration; non-negative for a descent step.
    pub model_decrease: Vec<f64>,
    /// Scale applied to each increment (1 unless a step was cut back).
    pub step_scales: Vec<f64>,
    pub dumped_systems: Vec<PathBuf>,
    pub wall_time: f64,
}

impl TrackingResult {
    pub fn descent_ok(&self) -> bool {
        self.model_decrease.iter().all(|d| *d >= 0.0)
    }

    pub fn telemetry(&self) -> Telemetry {
        Telemetry {
            energy_history: self.energy_history.clone(),
            residual_history: self.solve_reports.iter().map(|r| r.residual_history.clone()).collect(),
            pcg_iterations: self.solve_reports.iter().map(|r| r.iterations).collect(),
            model_decrease: self.model_decrease.clone(),
            step_scales: self.step_scales.clone(),
            timings_nondet: Timings {
                wall_time: self.wall_time,
                solve_times: self.solve_reports.iter().map(|r| r.wall_time).collect(),
                precond_setup_times: self.solve_reports.iter().map(|r| r.precond_setup_time).collect(),
            },
        }
    }
}

/// Contents of `telemetry.json`. Everything outside `timings_nondet` is
/// deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub energy_history: Vec<f64>,
    pub residual_history: Vec<Vec<f64>>,
    pub pcg_iterations: Vec<usize>,
    pub model_decrease: Vec<f64>,
    pub step_scales: Vec<f64>,
    pub timings_nondet: Timings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub wall_time: f64,
    pub solve_times: Vec<f64>,
    pub precond_setup_times: Vec<f64>,
}

impl Telemetry {
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Source depth at the graph anchors.
fn node_depth_grid(source: &Frame, lattice_w: usize, lattice_h: usize) -> Result<NodeGrid> {
    let lattice = Lattice::new(lattice_w, lattice_h, source.width(), source.height())?;
    NodeGrid::from_depth(lattice_w, lattice_h, lattice.sample_depth(source))
}

fn full_depth_grid(source: &Frame) -> Result<NodeGrid> {
    NodeGrid::from_depth(source.width(), source.height(), source.depth.clone())
}

fn feature_grids(
    source: &Frame,
    target: &Frame,
    g: &DeformGraph,
    features: Option<(&FeatureMap, &FeatureMap)>,
    cfg: &TrackerConfig,
) -> Result<(NodeGrid, NodeGrid)> {
    match (cfg.feature_source, features) {
        (FeatureSource::LoadedNrfm, Some((fs, ft))) => {
            for f in [fs, ft] {
                if (f.w, f.h) != (g.w(), g.h()) {
                    return Err(Error::ResolutionMismatch { w: g.w(), h: g.h(), got_w: f.w, got_h: f.h });
                }
            }
            let src_lattice = Lattice::new(g.w(), g.h(), source.width(), source.height())?;
            let src_valid = src_lattice.sample_depth(source).iter().map(|d| *d > 0.0).collect();
            Ok((NodeGrid::from_features(fs, Some(src_valid))?, NodeGrid::from_features(ft, None)?))
        }
        (FeatureSource::LoadedNrfm, None) => Err(Error::InvalidConfig("feature_source is loaded_nrfm but no feature maps were given".into())),
        (FeatureSource::IntensityFallback, _) => {
            let gray = cfg.fallback_channels == 1;
            let src_lattice = Lattice::new(g.w(), g.h(), source.width(), source.height())?;
            Ok((color_features(source, &src_lattice, gray), color_features(target, &g.lattice, gray)))
        }
    }
}

fn preconditioner_for(cfg: &TrackerConfig, a: &crate::solver::BlockSparseMatrix, iter: usize) -> Result<Preconditioner> {
    if cfg.preconditioner.is_loaded() {
        let path = cfg.factor_path.as_ref().expect("validated");
        let file = if path.is_dir() { path.join(format!("gn{iter}.nrpc")) } else { path.clone() };
        let m = Preconditioner::load(&file, a.n())?;
        if m.kind() != cfg.preconditioner {
            return Err(Error::InvalidConfig(format!(
                "{} holds a {} factor, config asks for {}",
                file.display(),
                m.kind(),
                cfg.preconditioner
            )));
        }
        Ok(m)
    } else {
        Preconditioner::build(cfg.preconditioner, a)
    }
}

/// Runs `cfg.gn_iters` Gauss-Newton iterations of `model` from `graph`.
fn gauss_newton(mut graph: DeformGraph, model: &EnergyModel, cfg: &TrackerConfig, iters: usize, reject_increase: bool) -> Result<TrackingResult> {
    let clock = Stopwatch::start();
    let mut energy = model.energy(&graph)?;
    let mut result = TrackingResult {
        graph: graph.clone(),
        energy_history: vec![energy],
        solve_reports: Vec::with_capacity(iters),
        model_decrease: Vec::with_capacity(iters),
        step_scales: Vec::with_capacity(iters),
        dumped_systems: Vec::new(),
        wall_time: 0.0,
    };
    for it in 0..iters {
        let blocks = model.residuals(&graph)?;
        let (a, b) = assemble_system(&blocks, &graph);
        if let Some(dir) = &cfg.dump_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("{}gn{it}.nrab", cfg.dump_prefix));
            dump_system(&a, &b, &path)?;
            result.dumped_systems.push(path);
        }
        let setup = Stopwatch::start();
        let m = preconditioner_for(cfg, &a, it)?;
        let setup_time = setup.seconds();
        let (delta, mut report) = pcg_solve(&a, &b, &m, cfg.pcg_iters, cfg.pcg_tol)?;
        report.precond_setup_time = setup_time;
        result.model_decrease.push(dot(&b, &delta));

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let mut trial = graph.clone();
            trial.apply_increment_in_place(&delta, scale)?;
            let e = model.energy(&trial)?;
            if e.is_finite() && (!reject_increase || e <= energy) {
                accepted = Some((trial, e));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((g, e)) => {
                graph = g;
                energy = e;
                result.step_scales.push(scale);
            }
            None if reject_increase => result.step_scales.push(0.0),
            None => return Err(Error::NonFinite(None)),
        }
        result.energy_history.push(energy);
        result.solve_reports.push(report);
    }
    result.graph = graph;
    result.wall_time = clock.seconds();
    Ok(result)
}

/// Tracks `target` (where the graph lives) onto `source`.
pub fn track(source: &Frame, target: &Frame, features: Option<(&FeatureMap, &FeatureMap)>, cfg: &TrackerConfig) -> Result<TrackingResult> {
    track_from(source, target, features, cfg, None)
}

/// [`track`] starting from `initial` motion instead of rest.
pub fn track_from(
    source: &Frame,
    target: &Frame,
    features: Option<(&FeatureMap, &FeatureMap)>,
    cfg: &TrackerConfig,
    initial: Option<&DeformGraph>,
) -> Result<TrackingResult> {
    cfg.validate()?;
    let mut graph = build_graph(target, &cfg.graph, None)?;
    if graph.valid_count() == 0 {
        return Err(Error::NoValidNodes);
    }
    if let Some(init) = initial {
        if init.node_count() != graph.node_count() {
            return Err(Error::DimensionMismatch { expected: graph.node_count(), got: init.node_count() });
        }
        graph.rot.clone_from(&init.rot);
        graph.trans.clone_from(&init.trans);
    }
    let model = energy_model(source, target, &graph, features, cfg)?;
    gauss_newton(graph, &model, cfg, cfg.gn_iters, false)
}

/// The coarse tracking energy of `graph` (built on `target`) against `source`.
pub fn energy_model(
    source: &Frame,
    target: &Frame,
    graph: &DeformGraph,
    features: Option<(&FeatureMap, &FeatureMap)>,
    cfg: &TrackerConfig,
) -> Result<EnergyModel> {
    let (feat_src, feat_tgt) = feature_grids(source, target, graph, features, cfg)?;
    Ok(EnergyModel {
        cams: CameraPair { src: source.intrinsics, tgt: target.intrinsics },
        weights: cfg.weights,
        feat_src: Some(feat_src),
        feat_tgt: Some(feat_tgt),
        depth_src: node_depth_grid(source, graph.w(), graph.h())?,
        depth_tgt: graph.lattice.sample_depth(target),
    })
}

/// Continues from `coarse` with the projective-depth and ARAP terms only,
/// sampling source depth at full resolution. The feature weight is forced to
/// zero; a step that raises the energy is halved and finally dropped.
pub fn refine_with_depth(source: &Frame, target: &Frame, coarse: &DeformGraph, cfg: &TrackerConfig) -> Result<TrackingResult> {
    cfg.validate()?;
    let weights = Weights { feature: 0.0, ..cfg.weights };
    weights.validate()?;
    let mut refine_cfg = cfg.clone();
    refine_cfg.weights = weights;
    refine_cfg.dump_dir = None;
    if refine_cfg.preconditioner.is_loaded() {
        refine_cfg.preconditioner = PreconditionerKind::BlockJacobi;
        refine_cfg.factor_path = None;
    }
    let model = EnergyModel {
        cams: CameraPair { src: source.intrinsics, tgt: target.intrinsics },
        weights,
        feat_src: None,
        feat_tgt: None,
        depth_src: full_depth_grid(source)?,
        depth_tgt: coarse.lattice.sample_depth(target),
    };
    gauss_newton(coarse.clone(), &model, &refine_cfg, cfg.refine_iters, true)
}
