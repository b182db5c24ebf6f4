//! WebAssembly bindings for the browser demo in `www/`.
//!
//! A [`Demo`] holds one synthetic frame pair. The page renders both frames,
//! tracks the pair with a chosen preconditioner and benchmarks the
//! preconditioners on the first Gauss-Newton system.

use serde_json::json;
use wasm_bindgen::prelude::*;
use warpgraph::bench::{run_bench, BenchOptions, BenchSystem};
use warpgraph::energy::assemble_system;
use warpgraph::frames::Frame;
use warpgraph::graph::DeformGraph;
use warpgraph::solver::{PreconditionerKind, Tolerance};
use warpgraph::synth::{evaluate_graph, generate_scene, JumpLevel, SceneConfig, SyntheticScene};
use warpgraph::tracker::{energy_model, track, TrackerConfig};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn rgba(frame: &Frame) -> Vec<u8> {
    frame
        .color
        .chunks_exact(3)
        .zip(&frame.depth)
        .flat_map(|(c, d)| [c[0], c[1], c[2], if *d > 0.0 { 255 } else { 0 }])
        .collect()
}

/// Source pixel of every valid node under the graph's motion, as
/// `[target_x, target_y, source_x, source_y]`.
fn node_arrows(g: &DeformGraph, frame: &Frame) -> Vec<[f64; 4]> {
    (0..g.node_count())
        .filter(|i| g.node_mask[*i])
        .filter_map(|i| {
            let moved = g.node_pos[i] + g.trans[i];
            let px = frame.intrinsics.project(&moved).ok()?;
            Some([g.node_pixel[i].x, g.node_pixel[i].y, px.x, px.y])
        })
        .collect()
}

#[wasm_bindgen]
pub struct Demo {
    scene: SyntheticScene,
}

#[wasm_bindgen]
impl Demo {
    /// Synthetic pair for `seed` at jump level 2, 4, 8 or 16.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, jump: u32) -> Result<Demo, JsError> {
        let level: JumpLevel = jump.to_string().parse().map_err(js_err)?;
        let scene = generate_scene(seed as u64, &SceneConfig::with_jump(level)).map_err(js_err)?;
        Ok(Demo { scene })
    }

    pub fn width(&self) -> usize {
        self.scene.target.width()
    }

    pub fn height(&self) -> usize {
        self.scene.target.height()
    }

    /// RGBA bytes; pixels without depth are transparent.
    pub fn source_rgba(&self) -> Vec<u8> {
        rgba(&self.scene.source)
    }

    pub fn target_rgba(&self) -> Vec<u8> {
        rgba(&self.scene.target)
    }

    /// Tracks the pair and returns JSON with EPE, the energy history and
    /// estimated and ground-truth node arrows.
    pub fn track(&self, preconditioner: &str, gn_iters: usize, pcg_iters: usize) -> Result<String, JsError> {
        let cfg = TrackerConfig {
            preconditioner: preconditioner.parse().map_err(js_err)?,
            gn_iters,
            pcg_iters,
            ..TrackerConfig::default()
        };
        cfg.validate().map_err(js_err)?;
        let s = &self.scene;
        let r = track(&s.source, &s.target, None, &cfg).map_err(js_err)?;
        let eval = evaluate_graph(&r.graph, &s.gt_flow).map_err(js_err)?;
        Ok(json!({
            "epe_mean": eval.epe_mean,
            "epe_median": eval.epe_median,
            "zero_motion_epe": s.zero_motion_epe(),
            "energy_history": r.energy_history,
            "pcg_iterations": r.solve_reports.iter().map(|x| x.iterations).collect::<Vec<_>>(),
            "estimate": node_arrows(&r.graph, &s.target),
            "ground_truth": node_arrows(&s.gt_graph, &s.target),
        })
        .to_string())
    }

    /// Solves the first Gauss-Newton system with identity, block-Jacobi and
    /// IC(0) to absolute residual 1e-6. Returns JSON with a per-kind summary
    /// and the residual curves as SVG.
    pub fn bench(&self, max_iters: usize) -> Result<String, JsError> {
        let s = &self.scene;
        let cfg = TrackerConfig::default();
        let mut g = s.gt_graph.clone();
        g.reset_motion();
        let model = energy_model(&s.source, &s.target, &g, None, &cfg).map_err(js_err)?;
        let (a, b) = assemble_system(&model.residuals(&g).map_err(js_err)?, &g);
        let opts = BenchOptions {
            kinds: vec![PreconditionerKind::Identity, PreconditionerKind::BlockJacobi, PreconditionerKind::IncompleteCholesky],
            max_iters,
            tol: Tolerance::Absolute(1e-6),
            estimate_kappa: true,
            factor_dir: None,
        };
        let report = run_bench(&[BenchSystem { id: "gn0".into(), a, b }], &opts);
        if let Some(f) = report.failures.first() {
            return Err(JsError::new(&format!("{}: {}", f.kind, f.message)));
        }
        let rows: Vec<_> = report
            .rows
            .iter()
            .map(|r| json!({ "kind": r.kind.name(), "iterations": r.iterations, "converged": r.converged, "kappa": r.kappa }))
            .collect();
        Ok(json!({ "rows": rows, "svg": report.curves_svg() }).to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracking_json_has_arrows_for_every_valid_node() {
        let d = Demo::new(0, 2).unwrap();
        assert_eq!(d.source_rgba().len(), 4 * d.width() * d.height());
        let v: serde_json::Value = serde_json::from_str(&d.track("ic0", 3, 10).unwrap()).unwrap();
        let valid = d.scene.gt_graph.valid_count();
        assert_eq!(v["estimate"].as_array().unwrap().len(), valid);
        assert_eq!(v["ground_truth"].as_array().unwrap().len(), valid);
        assert!(v["epe_mean"].as_f64().unwrap() < v["zero_motion_epe"].as_f64().unwrap());
    }

    #[test]
    fn bench_orders_preconditioners() {
        let d = Demo::new(1, 4).unwrap();
        let v: serde_json::Value = serde_json::from_str(&d.bench(2000).unwrap()).unwrap();
        let iters: Vec<u64> = v["rows"].as_array().unwrap().iter().map(|r| r["iterations"].as_u64().unwrap()).collect();
        assert_eq!(iters.len(), 3);
        assert!(iters[0] >= iters[1] && iters[1] >= iters[2], "{iters:?}");
        assert!(v["svg"].as_str().unwrap().contains("<svg"));
    }
}
