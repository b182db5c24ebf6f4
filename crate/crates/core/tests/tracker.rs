use warpgraph::solver::{dense_inverse_factor, load_system, pcg_solve, Preconditioner, PreconditionerKind};
use warpgraph::synth::{evaluate_graph, generate_scene, JumpLevel, SceneConfig};
use warpgraph::tracker::{refine_with_depth, track, TrackerConfig};
use warpgraph::Error;

fn scene(seed: u64, level: JumpLevel) -> warpgraph::synth::SyntheticScene {
    generate_scene(seed, &SceneConfig::with_jump(level)).unwrap()
}

#[test]
fn energy_history_has_one_entry_per_iteration_plus_start() {
    let s = scene(0, JumpLevel::J4);
    for gn in [1, 3, 5] {
        let cfg = TrackerConfig { gn_iters: gn, ..TrackerConfig::default() };
        let r = track(&s.source, &s.target, None, &cfg).unwrap();
        assert_eq!(r.energy_history.len(), gn + 1);
        assert_eq!(r.solve_reports.len(), gn);
        assert_eq!(r.model_decrease.len(), gn);
        assert!(r.energy_history.last() < r.energy_history.first());
    }
}

#[test]
fn dumped_systems_reload_and_resolve_identically() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene(1, JumpLevel::J8);
    let cfg = TrackerConfig {
        dump_dir: Some(dir.path().to_path_buf()),
        dump_prefix: "x_".into(),
        ..TrackerConfig::default()
    };
    let r = track(&s.source, &s.target, None, &cfg).unwrap();
    assert_eq!(r.dumped_systems.len(), 3);
    for (k, path) in r.dumped_systems.iter().enumerate() {
        assert_eq!(path.file_name().unwrap().to_str().unwrap(), format!("x_gn{k}.nrab"));
        let (a, b) = load_system(path).unwrap();
        let m = Preconditioner::build(cfg.preconditioner, &a).unwrap();
        let (_, report) = pcg_solve(&a, &b, &m, cfg.pcg_iters, cfg.pcg_tol).unwrap();
        assert_eq!(report.residual_history, r.solve_reports[k].residual_history);
    }
}

#[test]
fn tracking_is_deterministic() {
    let s = scene(2, JumpLevel::J2);
    let a = track(&s.source, &s.target, None, &TrackerConfig::default()).unwrap();
    let b = track(&s.source, &s.target, None, &TrackerConfig::default()).unwrap();
    assert_eq!(a.graph.pack_state(), b.graph.pack_state());
    assert_eq!(a.energy_history, b.energy_history);
}

#[test]
fn tight_solves_agree_across_preconditioners() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene(3, JumpLevel::J4);
    let tight = |kind| TrackerConfig {
        preconditioner: kind,
        pcg_iters: 5000,
        pcg_tol: 1e-10,
        ..TrackerConfig::default()
    };
    let reference = track(&s.source, &s.target, None, &TrackerConfig {
        dump_dir: Some(dir.path().to_path_buf()),
        ..tight(PreconditionerKind::IncompleteCholesky)
    })
    .unwrap();
    let ref_epe = evaluate_graph(&reference.graph, &s.gt_flow).unwrap().epe_mean;

    // Exact inverse factors of the reference trajectory's systems.
    let factors = dir.path().join("factors");
    std::fs::create_dir_all(&factors).unwrap();
    for (k, path) in reference.dumped_systems.iter().enumerate() {
        let (a, _) = load_system(path).unwrap();
        dense_inverse_factor(&a.to_dense()).unwrap().save(&factors.join(format!("gn{k}.nrpc"))).unwrap();
    }

    for kind in [PreconditionerKind::Identity, PreconditionerKind::BlockJacobi, PreconditionerKind::LoadedDense] {
        let cfg = TrackerConfig { factor_path: Some(factors.clone()), ..tight(kind) };
        let r = track(&s.source, &s.target, None, &cfg).unwrap();
        let epe = evaluate_graph(&r.graph, &s.gt_flow).unwrap().epe_mean;
        assert!((epe - ref_epe).abs() < 1e-6, "{kind}: {epe} vs {ref_epe}");
    }
}

#[test]
fn loaded_factor_file_is_used_for_every_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene(4, JumpLevel::J2);
    let first = track(&s.source, &s.target, None, &TrackerConfig {
        gn_iters: 1,
        dump_dir: Some(dir.path().to_path_buf()),
        ..TrackerConfig::default()
    })
    .unwrap();
    let (a, _) = load_system(&first.dumped_systems[0]).unwrap();
    let file = dir.path().join("one.nrpc");
    dense_inverse_factor(&a.to_dense()).unwrap().save(&file).unwrap();
    let cfg = TrackerConfig {
        preconditioner: PreconditionerKind::LoadedDense,
        factor_path: Some(file.clone()),
        ..TrackerConfig::default()
    };
    let r = track(&s.source, &s.target, None, &cfg).unwrap();
    assert_eq!(r.solve_reports[0].iterations, 1);

    let wrong_kind = TrackerConfig { preconditioner: PreconditionerKind::LoadedSparse, ..cfg };
    assert!(matches!(track(&s.source, &s.target, None, &wrong_kind), Err(Error::InvalidConfig(_))));
}

#[test]
fn missing_per_iteration_factor_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene(5, JumpLevel::J2);
    let cfg = TrackerConfig {
        preconditioner: PreconditionerKind::LoadedDense,
        factor_path: Some(dir.path().to_path_buf()),
        ..TrackerConfig::default()
    };
    assert!(track(&s.source, &s.target, None, &cfg).unwrap_err().is_input_error());
}

#[test]
fn refinement_never_increases_energy() {
    for seed in 0..6 {
        let s = scene(seed, JumpLevel::ALL[seed as usize % 4]);
        let coarse = track(&s.source, &s.target, None, &TrackerConfig::default()).unwrap();
        let r = refine_with_depth(&s.source, &s.target, &coarse.graph, &TrackerConfig::default()).unwrap();
        for w in r.energy_history.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: {:?}", r.energy_history);
        }
    }
}

#[test]
fn refinement_ignores_the_feature_term() {
    let s = scene(6, JumpLevel::J8);
    let coarse = track(&s.source, &s.target, None, &TrackerConfig::default()).unwrap();
    let base = TrackerConfig::default();
    let mut heavy = base.clone();
    heavy.weights.feature = 25.0;
    heavy.fallback_channels = 3;
    let a = refine_with_depth(&s.source, &s.target, &coarse.graph, &base).unwrap();
    let b = refine_with_depth(&s.source, &s.target, &coarse.graph, &heavy).unwrap();
    assert_eq!(a.graph.pack_state(), b.graph.pack_state());
    assert_eq!(a.energy_history, b.energy_history);
}

#[test]
fn tracking_beats_zero_motion_on_average() {
    let mut ratio = 0.0;
    for seed in 0..5 {
        let s = scene(seed, JumpLevel::J4);
        let r = track(&s.source, &s.target, None, &TrackerConfig::default()).unwrap();
        ratio += evaluate_graph(&r.graph, &s.gt_flow).unwrap().epe_mean / s.zero_motion_epe();
    }
    assert!(ratio / 5.0 < 0.5, "{}", ratio / 5.0);
}

#[test]
fn invalid_config_is_rejected_before_work() {
    let s = scene(0, JumpLevel::J2);
    let cfg = TrackerConfig { fallback_channels: 2, ..TrackerConfig::default() };
    assert!(matches!(track(&s.source, &s.target, None, &cfg), Err(Error::InvalidConfig(_))));
}
