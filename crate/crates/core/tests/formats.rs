use nalgebra::{DMatrix, Matrix6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpgraph::frames::{load_frame_dir, save_frame_dir, FeatureMap};
use warpgraph::graph::DeformGraph;
use warpgraph::solver::{dump_system, load_system, system_from_bytes, system_to_bytes, BlockSparseMatrix, LoadedFactor};
use warpgraph::synth::{generate_scene, load_scene, save_scene, JumpLevel, SceneConfig};
use warpgraph::tracker::{track, TrackerConfig};
use warpgraph::Error;

fn random_system(rng: &mut ChaCha8Rng, nb: usize) -> (BlockSparseMatrix, Vec<f64>) {
    let mut entries = Vec::new();
    for i in 0..nb {
        for j in 0..=i {
            if i == j || rng.random_bool(0.3) {
                entries.push((i, j, Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0))));
            }
        }
    }
    let a = BlockSparseMatrix::from_lower(nb, entries).unwrap();
    let b = (0..6 * nb).map(|_| rng.random_range(-1.0..1.0)).collect();
    (a, b)
}

fn assert_format_error<T: std::fmt::Debug>(r: warpgraph::Result<T>) {
    assert!(matches!(r, Err(Error::Format(_))), "{r:?}");
}

#[test]
fn nrab_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for nb in [1, 3, 17] {
        let (a, b) = random_system(&mut rng, nb);
        let path = dir.path().join(format!("s{nb}.nrab"));
        dump_system(&a, &b, &path).unwrap();
        let (a2, b2) = load_system(&path).unwrap();
        assert_eq!(a2.to_dense(), a.to_dense());
        assert_eq!(b2, b);
        assert_eq!(system_to_bytes(&a2, &b2).unwrap(), std::fs::read(&path).unwrap());
    }
}

#[test]
fn nrab_rejects_corruption() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (a, b) = random_system(&mut rng, 4);
    let good = system_to_bytes(&a, &b).unwrap();
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert_format_error(system_from_bytes(&bad_magic));
    let mut bad_dim = good.clone();
    bad_dim[8] = 5;
    assert_format_error(system_from_bytes(&bad_dim));
    assert_format_error(system_from_bytes(&good[..good.len() - 1]));
    let mut extra = good.clone();
    extra.push(0);
    assert_format_error(system_from_bytes(&extra));
    assert_format_error(system_from_bytes(&good[..3]));
}

fn lower(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Less => 0.0,
        std::cmp::Ordering::Equal => rng.random_range(0.5..1.5),
        std::cmp::Ordering::Greater => rng.random_range(-0.1..0.1),
    })
}

#[test]
fn nrpc_round_trip_for_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l = lower(&mut rng, 12);
    let (a, _) = random_system(&mut rng, 2);
    let blocks: Vec<Matrix6<f64>> = (0..2).map(|_| Matrix6::from_fn(|i, j| if i >= j { rng.random_range(0.5..1.0) } else { 0.0 })).collect();
    let factors = [
        LoadedFactor::dense(&l).unwrap(),
        LoadedFactor::sparse_masked(&l, &a).unwrap(),
        LoadedFactor::block_diagonal(&blocks).unwrap(),
    ];
    for (k, f) in factors.iter().enumerate() {
        let path = dir.path().join(format!("f{k}.nrpc"));
        f.save(&path).unwrap();
        let g = LoadedFactor::load(&path).unwrap();
        assert_eq!(g.kind(), f.kind());
        assert_eq!(g.to_bytes(), std::fs::read(&path).unwrap());
        let r: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let (mut z1, mut z2) = (vec![0.0; 12], vec![0.0; 12]);
        f.apply(&r, &mut z1);
        g.apply(&r, &mut z2);
        assert_eq!(z1, z2);

        let mut bad = f.to_bytes();
        bad[1] ^= 0xff;
        assert_format_error(LoadedFactor::from_bytes(&bad));
        let short = f.to_bytes();
        assert_format_error(LoadedFactor::from_bytes(&short[..short.len() - 8]));
    }
}

#[test]
fn nrfm_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<f32> = (0..16 * 12 * 5).map(|i| (i as f32 * 0.37).cos()).collect();
    let fm = FeatureMap::new(16, 12, 5, data).unwrap();
    let path = dir.path().join("feat.nrfm");
    fm.save(&path).unwrap();
    let back = FeatureMap::load(&path).unwrap();
    assert_eq!(back, fm);
    assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());

    let bytes = fm.to_bytes();
    assert_format_error(FeatureMap::from_bytes(&bytes[..bytes.len() - 4]));
    let mut bad = bytes.clone();
    bad[3] = b'X';
    assert_format_error(FeatureMap::from_bytes(&bad));
    let mut nan = bytes.clone();
    let at = bytes.len() - 4;
    nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert_format_error(FeatureMap::from_bytes(&nan));
}

#[test]
fn frame_dir_round_trip_is_stable_after_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(0, &SceneConfig::with_jump(JumpLevel::J4)).unwrap();
    save_frame_dir(&scene.source, &dir.path().join("a")).unwrap();
    let once = load_frame_dir(&dir.path().join("a")).unwrap();
    assert_eq!(once.color, scene.source.color);
    let scale = scene.source.intrinsics.depth_scale;
    for (q, d) in once.depth.iter().zip(&scene.source.depth) {
        assert!((q - d).abs() <= 0.5 * scale + 1e-12);
    }
    save_frame_dir(&once, &dir.path().join("b")).unwrap();
    for f in ["color.png", "depth.png", "intrinsics.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn frame_dir_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(1, &SceneConfig::default()).unwrap();
    save_frame_dir(&scene.target, dir.path()).unwrap();
    std::fs::write(dir.path().join("depth.png"), b"not a png").unwrap();
    assert!(load_frame_dir(dir.path()).unwrap_err().is_input_error());
    save_frame_dir(&scene.target, dir.path()).unwrap();
    std::fs::write(dir.path().join("intrinsics.json"), b"{\"fx\": 1}").unwrap();
    assert!(load_frame_dir(dir.path()).unwrap_err().is_input_error());
}

#[test]
fn scene_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(7, &SceneConfig::with_jump(JumpLevel::J8)).unwrap();
    save_scene(&scene, &dir.path().join("a")).unwrap();
    let files = load_scene(&dir.path().join("a")).unwrap();
    assert_eq!(files.gt_flow, scene.gt_flow);
    assert_eq!(files.meta.seed, 7);
    assert_eq!(files.meta.jump_level, JumpLevel::J8);
    files.save(&dir.path().join("b")).unwrap();
    for f in ["source/color.png", "source/depth.png", "target/depth.png", "gt_flow.json", "meta.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(load_scene(&dir.path().join("b")).unwrap(), files);
}

#[test]
fn graph_json_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(4, &SceneConfig::with_jump(JumpLevel::J2)).unwrap();
    let r = track(&scene.source, &scene.target, None, &TrackerConfig::default()).unwrap();
    let path = dir.path().join("graph.json");
    r.graph.save_json(&path).unwrap();
    let back = DeformGraph::load_json(&path).unwrap();
    for (a, b) in back.pack_state().iter().zip(r.graph.pack_state()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(back.rot, r.graph.rot);
    assert_eq!(back.node_mask, r.graph.node_mask);
    assert_eq!(back.edge_mask, r.graph.edge_mask);

    std::fs::write(&path, "{\"w\": 16}").unwrap();
    assert_format_error(DeformGraph::load_json(&path));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn nrab_round_trip_for_random_systems(seed in any::<u64>(), nb in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = random_system(&mut rng, nb);
        let bytes = system_to_bytes(&a, &b).unwrap();
        let (a2, b2) = system_from_bytes(&bytes).unwrap();
        prop_assert_eq!(system_to_bytes(&a2, &b2).unwrap(), bytes);
    }

    #[test]
    fn nrfm_round_trip_for_random_maps(w in 1usize..8, h in 1usize..8, c in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * c).map(|_| rng.random_range(-1e3f32..1e3)).collect();
        let fm = FeatureMap::new(w, h, c, data).unwrap();
        prop_assert_eq!(FeatureMap::from_bytes(&fm.to_bytes()).unwrap(), fm);
    }
}
