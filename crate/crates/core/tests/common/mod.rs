#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use warpgraph::solver::{load_system, Block, BlockSparseMatrix};
use warpgraph::synth::{generate_scene, JumpLevel, SceneConfig};
use warpgraph::tracker::{track, TrackerConfig};

pub fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random SPD block-sparse matrix: random off-diagonal blocks on a random
/// pattern, then a diagonal shift that makes it strictly diagonally dominant.
pub fn random_block_spd(nblocks: usize, density: f64, rng: &mut ChaCha8Rng) -> BlockSparseMatrix {
    let mut entries = Vec::new();
    let mut row_abs = vec![0.0; 6 * nblocks];
    for i in 0..nblocks {
        for j in 0..i {
            if rng.random_bool(density) {
                let b = Block::from_fn(|_, _| rng.random_range(-1.0..1.0));
                for r in 0..6 {
                    for c in 0..6 {
                        row_abs[6 * i + r] += b[(r, c)].abs();
                        row_abs[6 * j + c] += b[(r, c)].abs();
                    }
                }
                entries.push((i, j, b));
            }
        }
    }
    for i in 0..nblocks {
        let g = Block::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let mut d = g * g.transpose();
        for r in 0..6 {
            let off: f64 = (0..6).filter(|c| *c != r).map(|c| d[(r, c)].abs()).sum();
            d[(r, r)] += off + row_abs[6 * i + r] + rng.random_range(0.1..1.0);
        }
        entries.push((i, i, d));
    }
    BlockSparseMatrix::from_lower(nblocks, entries).unwrap()
}

pub fn random_dense_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (b.transpose() * &b) / n as f64 + DMatrix::identity(n, n) * 0.5
}

/// Gauss-Newton systems dumped while tracking synthetic scenes at every jump
/// level, three per scene, in a fixed order.
pub fn gn_corpus(count: usize) -> Vec<(String, BlockSparseMatrix, Vec<f64>)> {
    let dir = tempfile::tempdir().unwrap();
    let mut out = Vec::new();
    let mut seed = 0u64;
    while out.len() < count {
        let level = JumpLevel::ALL[seed as usize % 4];
        let scene = generate_scene(seed, &SceneConfig::with_jump(level)).unwrap();
        let cfg = TrackerConfig {
            dump_dir: Some(dir.path().to_path_buf()),
            dump_prefix: format!("s{seed:03}_"),
            ..Default::default()
        };
        let result = track(&scene.source, &scene.target, None, &cfg).unwrap();
        for path in result.dumped_systems {
            let (a, b) = load_system(&path).unwrap();
            out.push((path.file_stem().unwrap().to_string_lossy().into_owned(), a, b));
        }
        seed += 1;
    }
    out.truncate(count);
    out
}
