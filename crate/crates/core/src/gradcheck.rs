//! Finite-difference verification suites for every analytic derivative:
//! the bilinear sampler, the three energy terms, the exact solve adjoint and
//! the unrolled PCG gradient.
//!
//! Energy Jacobians are probed column by column: a probe perturbs one state
//! coordinate of a random graph state by `±FD_STEP` through
//! [`DeformGraph::apply_increment`] and compares the central difference of the
//! whole residual vector against the analytic column. The error of a probe is
//! `max |J - FD| / max(|J|_inf, |FD|_inf)` over the column.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjoint::{finite_diff_check_with, pcg_fixed_steps, solve_adjoint, unrolled_pcg_grad, Stencil, FD_STEP};
use crate::energy::{arap_residuals, feature_residuals, geometric_residuals, sample_bilinear, NodeGrid, ResidualBlock};
use crate::graph::{DeformGraph, NODE_DOF};
use crate::solver::{dense_direct_solve, LoadedFactor, Preconditioner};
use crate::synth::{generate_scene, JumpLevel, SceneConfig};
use crate::tracker::{energy_model, TrackerConfig};
use crate::{Error, Result};

pub const JACOBIAN_TOL: f64 = 1e-5;
pub const ADJOINT_TOL: f64 = 1e-6;
pub const UNROLLED_TOL: f64 = 1e-5;
pub const DEFAULT_PROBES: usize = 200;
pub const UNROLLED_STEPS: [usize; 4] = [1, 3, 5, 10];
const ADJOINT_SYSTEMS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub component: String,
    pub probes: usize,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

fn column_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs())) / scale
}

/// Analytic column `k` of a block's Jacobian.
fn analytic_column(block: &ResidualBlock, k: usize) -> Vec<f64> {
    (0..block.len())
        .map(|row| {
            let (cols, vals) = block.jacobian_row(row);
            cols.iter().zip(vals).filter(|(c, _)| **c == k).map(|(_, v)| v).sum()
        })
        .collect()
}

/// Central-difference column `k`, or `None` when the residual row set
/// changes inside the stencil.
fn numeric_column<F>(g: &DeformGraph, k: usize, base: &ResidualBlock, eval: &F) -> Result<Option<Vec<f64>>>
where
    F: Fn(&DeformGraph) -> Result<ResidualBlock>,
{
    let mut delta = vec![0.0; g.state_dim()];
    delta[k] = FD_STEP;
    let plus = eval(&g.apply_increment(&delta)?)?;
    delta[k] = -FD_STEP;
    let minus = eval(&g.apply_increment(&delta)?)?;
    if plus.row_nodes != base.row_nodes || minus.row_nodes != base.row_nodes {
        return Ok(None);
    }
    Ok(Some(plus.r.iter().zip(&minus.r).map(|(p, m)| (p - m) / (2.0 * FD_STEP)).collect()))
}

/// Random graph state near the generator ground truth.
fn jittered(g: &DeformGraph, rng: &mut ChaCha8Rng) -> Result<DeformGraph> {
    let delta: Vec<f64> = (0..g.state_dim())
        .map(|k| if k % NODE_DOF < 3 { rng.random_range(-0.05..0.05) } else { rng.random_range(-0.003..0.003) })
        .collect();
    g.apply_increment(&delta)
}

struct TermProbe<'a> {
    name: &'a str,
    translation_only: bool,
}

fn probe_terms(seed: u64, probes: usize) -> Result<Vec<CheckResult>> {
    let terms = [
        TermProbe { name: "feature", translation_only: true },
        TermProbe { name: "geometric", translation_only: true },
        TermProbe { name: "arap", translation_only: false },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TrackerConfig::default();
    let mut results: Vec<CheckResult> =
        terms.iter().map(|t| CheckResult { component: t.name.into(), probes: 0, max_rel_err: 0.0, threshold: JACOBIAN_TOL }).collect();
    let states_per_scene = 4;
    let probes_per_state = 16;
    let mut scene_seed = seed;
    while results.iter().any(|r| r.probes < probes) {
        let level = JumpLevel::ALL[(scene_seed % 4) as usize];
        let scene = generate_scene(scene_seed, &SceneConfig::with_jump(level))?;
        scene_seed += 1;
        let model = energy_model(&scene.source, &scene.target, &scene.gt_graph, None, &cfg)?;
        for _ in 0..states_per_scene {
            let g = jittered(&scene.gt_graph, &mut rng)?;
            for (t, res) in terms.iter().zip(results.iter_mut()) {
                let eval = |g: &DeformGraph| -> Result<ResidualBlock> {
                    match t.name {
                        "feature" => feature_residuals(
                            g,
                            model.feat_src.as_ref().expect("fallback features"),
                            model.feat_tgt.as_ref().expect("fallback features"),
                            &model.depth_tgt,
                            &model.cams,
                            model.weights.feature,
                        ),
                        "geometric" => geometric_residuals(g, &model.depth_src, &model.depth_tgt, &model.cams, model.weights.geometric),
                        _ => Ok(arap_residuals(g, model.weights.arap)),
                    }
                };
                let base = eval(&g)?;
                let nodes: Vec<usize> = {
                    let mut v: Vec<usize> = base.row_nodes.iter().map(|(i, _)| *i).collect();
                    v.dedup();
                    v
                };
                if nodes.is_empty() {
                    continue;
                }
                let mut done = 0;
                let mut attempts = 0;
                while done < probes_per_state && res.probes < probes && attempts < 4 * probes_per_state {
                    attempts += 1;
                    let node = nodes[rng.random_range(0..nodes.len())];
                    let dof = if t.translation_only { 3 + rng.random_range(0..3) } else { rng.random_range(0..NODE_DOF) };
                    let k = NODE_DOF * node + dof;
                    let Some(numeric) = numeric_column(&g, k, &base, &eval)? else { continue };
                    let analytic = analytic_column(&base, k);
                    res.max_rel_err = res.max_rel_err.max(column_error(&analytic, &numeric));
                    res.probes += 1;
                    done += 1;
                }
            }
        }
        if scene_seed > seed + 64 {
            return Err(Error::DegenerateScene("too few stable probes".into()));
        }
    }
    Ok(results)
}

fn probe_sampler(seed: u64, probes: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = CheckResult { component: "sampler".into(), probes: 0, max_rel_err: 0.0, threshold: JACOBIAN_TOL };
    while res.probes < probes {
        let (w, h, c) = (rng.random_range(2..9), rng.random_range(2..9), rng.random_range(1..4));
        let data = (0..w * h * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grid = NodeGrid::new(w, h, c, data, vec![true; w * h])?;
        // Keep the stencil inside one cell; the sampler is not differentiable across cell edges.
        let interior = |x: f64| {
            let frac = x - x.floor();
            if (1e-3..=1.0 - 1e-3).contains(&frac) { x } else { x.floor() + 0.5 }
        };
        let uv = Vector2::new(
            interior(rng.random_range(0.0..(w - 1) as f64)),
            interior(rng.random_range(0.0..(h - 1) as f64)),
        );
        let (_, grads) = sample_bilinear(&grid, &uv)?;
        for axis in 0..2 {
            let mut up = uv;
            let mut um = uv;
            up[axis] += FD_STEP;
            um[axis] -= FD_STEP;
            let (vp, _) = sample_bilinear(&grid, &up)?;
            let (vm, _) = sample_bilinear(&grid, &um)?;
            let numeric: Vec<f64> = vp.iter().zip(&vm).map(|(p, m)| (p - m) / (2.0 * FD_STEP)).collect();
            let analytic: Vec<f64> = grads.iter().map(|g| g[axis]).collect();
            res.max_rel_err = res.max_rel_err.max(column_error(&analytic, &numeric));
        }
        res.probes += 1;
    }
    Ok(res)
}

/// Sampler, feature, geometric and ARAP Jacobians, `probes` columns each.
pub fn jacobian_suite(seed: u64, probes: usize) -> Result<Vec<CheckResult>> {
    let mut out = vec![probe_sampler(seed, probes)?];
    out.extend(probe_terms(seed, probes)?);
    Ok(out)
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (b.transpose() * &b) / n as f64 + DMatrix::identity(n, n) * 0.5
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_lower_factor(n: usize, rng: &mut ChaCha8Rng) -> Result<LoadedFactor> {
    let l = DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => rng.random_range(0.5..1.5),
        std::cmp::Ordering::Greater => rng.random_range(-0.2..0.2),
        std::cmp::Ordering::Less => 0.0,
    });
    LoadedFactor::dense(&l)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

/// Exact adjoint of a converged solve against differences of the dense
/// direct oracle, on random SPD systems of size 12..=60.
pub fn exact_adjoint_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grad_b = CheckResult { component: "adjoint grad_b".into(), probes: 0, max_rel_err: 0.0, threshold: ADJOINT_TOL };
    let mut grad_a = CheckResult { component: "adjoint grad_A".into(), probes: 0, max_rel_err: 0.0, threshold: ADJOINT_TOL };
    for trial in 0..ADJOINT_SYSTEMS {
        let n = 12 + (trial * 48) / (ADJOINT_SYSTEMS - 1);
        let a = random_spd(n, &mut rng);
        let b = random_vec(n, &mut rng);
        let c = random_vec(n, &mut rng);
        let x = dense_direct_solve(&a, &b)?;
        let g = solve_adjoint(&a, &x, &c, &Preconditioner::Identity, 1e-14)?;

        let direct = |bb: &[f64]| dense_direct_solve(&a, bb).map_or(f64::NAN, |x| dot(&c, &x));
        let rep = finite_diff_check_with(direct, &b, &g.grad_b, 1e-2, Stencil::Adaptive)?;
        grad_b.max_rel_err = grad_b.max_rel_err.max(rep.max_rel_err);
        grad_b.probes += n;

        // Entrywise through an LU solve so every entry of A is independent.
        let ga = g.grad_a_dense();
        let loss = |flat: &[f64]| {
            let m = DMatrix::from_column_slice(n, n, flat);
            m.lu().solve(&DVector::from_column_slice(&b)).map_or(f64::NAN, |x| dot(&c, x.as_slice()))
        };
        let rep = finite_diff_check_with(loss, &flatten(&a), &flatten(&ga), 1e-2, Stencil::Adaptive)?;
        grad_a.max_rel_err = grad_a.max_rel_err.max(rep.max_rel_err);
        grad_a.probes += n * n;
    }
    Ok(vec![grad_b, grad_a])
}

/// Unrolled PCG gradients against differences of the truncated iteration
/// map, with the identity and a random loaded dense factor.
pub fn unrolled_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 20;
    let mut out = Vec::new();
    for &k in &UNROLLED_STEPS {
        let mut res = CheckResult { component: format!("unrolled k={k}"), probes: 0, max_rel_err: 0.0, threshold: UNROLLED_TOL };
        for loaded in [false, true] {
            let a = random_spd(n, &mut rng);
            let b = random_vec(n, &mut rng);
            let c = random_vec(n, &mut rng);
            let m = if loaded { Preconditioner::Loaded(random_lower_factor(n, &mut rng)?) } else { Preconditioner::Identity };
            let (gb, ga) = unrolled_pcg_grad(&a, &b, &m, k, &c)?;
            let map_b = |bb: &[f64]| pcg_fixed_steps(&a, bb, &m, k).map_or(f64::NAN, |x| dot(&c, &x));
            let rep = finite_diff_check_with(map_b, &b, &gb, 1e-2, Stencil::Adaptive)?;
            res.max_rel_err = res.max_rel_err.max(rep.max_rel_err);
            let map_a = |flat: &[f64]| {
                let mm = DMatrix::from_column_slice(n, n, flat);
                pcg_fixed_steps(&mm, &b, &m, k).map_or(f64::NAN, |x| dot(&c, &x))
            };
            let rep = finite_diff_check_with(map_a, &flatten(&a), &flatten(&ga), 1e-2, Stencil::Adaptive)?;
            res.max_rel_err = res.max_rel_err.max(rep.max_rel_err);
            res.probes += n + n * n;
        }
        out.push(res);
    }
    Ok(out)
}

/// Every suite in a fixed order.
pub fn full_suite(seed: u64, probes: usize) -> Result<Vec<CheckResult>> {
    let mut out = jacobian_suite(seed, probes)?;
    out.extend(exact_adjoint_suite(seed)?);
    out.extend(unrolled_suite(seed)?);
    Ok(out)
}
