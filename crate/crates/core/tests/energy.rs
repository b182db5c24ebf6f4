use nalgebra::{DMatrix, Matrix3, Rotation3, Vector2, Vector3};
use proptest::prelude::*;
use warpgraph::energy::*;
use warpgraph::frames::{Frame, Intrinsics};
use warpgraph::gradcheck::{jacobian_suite, DEFAULT_PROBES, JACOBIAN_TOL};
use warpgraph::graph::{build_graph, DeformGraph, GraphConfig};
use warpgraph::synth::{generate_scene, JumpLevel, SceneConfig};
use warpgraph::tracker::{energy_model, track, TrackerConfig};

#[test]
fn every_jacobian_matches_central_differences() {
    let results = jacobian_suite(0, DEFAULT_PROBES).unwrap();
    let names: Vec<&str> = results.iter().map(|r| r.component.as_str()).collect();
    assert_eq!(names, ["sampler", "feature", "geometric", "arap"]);
    for r in results {
        assert!(r.probes >= DEFAULT_PROBES, "{r:?}");
        assert!(r.max_rel_err < JACOBIAN_TOL, "{r:?}");
    }
}

#[test]
fn sampler_gradient_over_1000_probes() {
    let (w, h) = (7, 5);
    let data: Vec<f64> = (0..w * h).map(|i| ((i * 37 % 11) as f64 * 0.3).sin()).collect();
    let grid = NodeGrid::new(w, h, 1, data, vec![true; w * h]).unwrap();
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        // Low-discrepancy points strictly inside cells.
        let u = ((k as f64 * 0.618_034).fract() * (w - 1) as f64).clamp(0.0, (w - 1) as f64);
        let v = ((k as f64 * 0.754_877).fract() * (h - 1) as f64).clamp(0.0, (h - 1) as f64);
        if [u, v].iter().any(|x| (x - x.round()).abs() < 1e-4) {
            continue;
        }
        let uv = Vector2::new(u, v);
        let (_, g) = sample_bilinear(&grid, &uv).unwrap();
        for axis in 0..2 {
            let mut p = uv;
            let mut m = uv;
            p[axis] += step;
            m[axis] -= step;
            let fd = (sample_bilinear(&grid, &p).unwrap().0[0] - sample_bilinear(&grid, &m).unwrap().0[0]) / (2.0 * step);
            let denom = g[0][axis].abs().max(fd.abs()).max(1e-12);
            worst = worst.max((g[0][axis] - fd).abs() / denom);
        }
    }
    assert!(worst < 1e-6, "{worst}");
}

fn plane_frame(depth: f64) -> Frame {
    let k = Intrinsics::new(80.0, 80.0, 39.5, 29.5, 80, 60).unwrap();
    let color = (0..80 * 60).flat_map(|i| {
        let v = (((i % 80) as f64 * 0.2).sin() * 100.0 + 128.0) as u8;
        [v, v, v]
    });
    Frame::new(color.collect(), vec![depth; 80 * 60], k, "plane").unwrap()
}

fn plane_graph() -> DeformGraph {
    build_graph(&plane_frame(1.0), &GraphConfig { w: 8, h: 6, ..Default::default() }, None).unwrap()
}

fn rigidly_moved(g: &DeformGraph, rot: &Matrix3<f64>, t: &Vector3<f64>) -> DeformGraph {
    let mut out = g.clone();
    for i in 0..g.node_count() {
        out.rot[i] = *rot;
        out.trans[i] = rot * g.node_pos[i] + t - g.node_pos[i];
    }
    out
}

#[test]
fn arap_is_zero_at_rest() {
    let g = plane_graph();
    assert!(g.edges().count() > 0);
    assert_eq!(arap_residuals(&g, 40.0).energy(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arap_vanishes_under_global_translation(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
        let g = rigidly_moved(&plane_graph(), &Matrix3::identity(), &Vector3::new(a, b, c));
        prop_assert!(arap_residuals(&g, 40.0).energy() < 1e-24);
    }

    #[test]
    fn arap_vanishes_under_global_rigid_motion(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        t in prop::array::uniform3(-0.5f64..0.5),
    ) {
        let axis = Vector3::from(axis);
        prop_assume!(axis.norm() > 1e-3);
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner();
        let g = rigidly_moved(&plane_graph(), &rot, &Vector3::from(t));
        prop_assert!(arap_residuals(&g, 40.0).energy() < 1e-22);
    }

    #[test]
    fn arap_detects_a_single_non_rigid_node(node in 0usize..48, d in 0.001f64..0.1) {
        let mut g = plane_graph();
        prop_assume!(g.node_mask[node]);
        g.trans[node].x += d;
        prop_assert!(arap_residuals(&g, 1.0).energy() > 0.0);
    }

    #[test]
    fn total_energy_matches_direct_sum(vals in prop::collection::vec(-10.0f64..10.0, 0..40)) {
        let g = plane_graph();
        let mut moved = g.clone();
        for (i, v) in vals.iter().enumerate() {
            moved.trans[i % g.node_count()].z += v * 1e-3;
        }
        let blocks = vec![arap_residuals(&moved, 2.0), arap_residuals(&moved, 0.5)];
        let direct: f64 = blocks.iter().flat_map(|b| b.r.iter()).map(|r| r * r).sum();
        prop_assert!((total_energy(&blocks) - direct).abs() <= 1e-14 * direct.max(1e-300));
    }
}

#[test]
fn assembly_matches_dense_materialization_on_2x2_graph() {
    let frame = plane_frame(1.0);
    let gcfg = GraphConfig { w: 2, h: 2, edge_len_thresh: 2.0, ..Default::default() };
    let mut g = build_graph(&frame, &gcfg, None).unwrap();
    assert_eq!(g.edges().count(), 12);
    g.trans[1] = Vector3::new(0.01, -0.02, 0.005);
    g.rot[2] = Rotation3::from_euler_angles(0.05, -0.02, 0.1).into_inner();
    let cfg = TrackerConfig { graph: gcfg, ..Default::default() };
    let model = energy_model(&plane_frame(1.02), &frame, &g, None, &cfg).unwrap();
    let blocks = model.residuals(&g).unwrap();
    let (a, b) = assemble_system(&blocks, &g);
    let n = g.state_dim();
    let rows: usize = blocks.iter().map(|b| b.len()).sum();
    let mut j = DMatrix::zeros(rows, n);
    let mut r = Vec::with_capacity(rows);
    let mut off = 0;
    for blk in &blocks {
        let dense = blk.dense_jacobian(n);
        for k in 0..blk.len() {
            for c in 0..n {
                j[(off + k, c)] = dense[k * n + c];
            }
        }
        r.extend_from_slice(&blk.r);
        off += blk.len();
    }
    let mut jtj = j.transpose() * &j;
    let mut jtr = j.transpose() * nalgebra::DVector::from_vec(r);
    // Untouched degrees of freedom are pinned by a unit diagonal.
    for k in 0..n {
        if jtj[(k, k)] == 0.0 {
            jtj[(k, k)] = 1.0;
            jtr[k] = 0.0;
        }
    }
    let ad = a.to_dense();
    let scale = jtj.amax().max(1.0);
    let diff = (ad - &jtj).amax();
    assert!(diff < 1e-12 * scale, "{diff} vs scale {scale}");
    for k in 0..n {
        assert!((b[k] + jtr[k]).abs() < 1e-12 * scale);
    }
}

#[test]
fn assembled_gn_systems_are_bit_symmetric_and_definite() {
    for (seed, level) in [(0u64, JumpLevel::J2), (1, JumpLevel::J16)] {
        let scene = generate_scene(seed, &SceneConfig::with_jump(level)).unwrap();
        let cfg = TrackerConfig::default();
        let model = energy_model(&scene.source, &scene.target, &scene.gt_graph, None, &cfg).unwrap();
        let (a, _) = assemble_system(&model.residuals(&scene.gt_graph).unwrap(), &scene.gt_graph);
        let d = a.to_dense();
        assert_eq!(d, d.transpose());
        assert!(d.clone().cholesky().is_some());
    }
}

#[test]
fn gn_model_decrease_is_non_negative_across_tracking_runs() {
    for seed in 0..8u64 {
        let scene = generate_scene(seed, &SceneConfig::with_jump(JumpLevel::ALL[seed as usize % 4])).unwrap();
        let r = track(&scene.source, &scene.target, None, &TrackerConfig::default()).unwrap();
        assert!(r.descent_ok(), "seed {seed}: {:?}", r.model_decrease);
    }
}

#[test]
fn energy_is_reproducible_across_evaluations() {
    let scene = generate_scene(3, &SceneConfig::with_jump(JumpLevel::J8)).unwrap();
    let cfg = TrackerConfig::default();
    let model = energy_model(&scene.source, &scene.target, &scene.gt_graph, None, &cfg).unwrap();
    let e1 = model.energy(&scene.gt_graph).unwrap();
    let e2 = model.energy(&scene.gt_graph).unwrap();
    assert_eq!(e1.to_bits(), e2.to_bits());
}
