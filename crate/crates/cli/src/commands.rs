use std::path::{Path, PathBuf};

use clap::Args;
use warpgraph::bench::{factor_file_name, run_bench, BenchOptions, BenchSystem, DEFAULT_BENCH_MAX_ITERS, DEFAULT_BENCH_TOL};
use warpgraph::frames::{load_frame_dir, FeatureMap, Frame};
use warpgraph::gradcheck::{full_suite, DEFAULT_PROBES};
use warpgraph::graph::DeformGraph;
use warpgraph::solver::{dense_inverse_factor, load_system, PreconditionerKind, Tolerance};
use warpgraph::synth::{evaluate_graph, generate_scene, load_gt_flow, load_scene, save_scene, EvalReport, JumpLevel, SceneConfig};
use warpgraph::tracker::{refine_with_depth, track as run_track, FeatureSource, TrackerConfig, TrackingResult};

use crate::lists::{parse_kinds, parse_levels, parse_seeds};
use crate::{CliError, Global};

type CmdResult = Result<(), CliError>;

// Aliases keep clap from treating the parsed lists as repeated flags.
type SeedList = Vec<u64>;
type LevelList = Vec<JumpLevel>;
type KindList = Vec<PreconditionerKind>;

/// Tracker settings that may override the config file.
#[derive(Args, Debug)]
pub struct TrackerFlags {
    /// Gauss-Newton iterations.
    #[arg(long)]
    gn_iters: Option<usize>,
    /// PCG iteration cap per Gauss-Newton step.
    #[arg(long)]
    pcg_iters: Option<usize>,
    /// PCG stop on residual norm relative to the right-hand side.
    #[arg(long)]
    pcg_tol: Option<f64>,
    /// identity, block-jacobi, ic0, loaded-dense, loaded-sparse or loaded-blockdiag.
    #[arg(long)]
    preconditioner: Option<PreconditionerKind>,
    /// NRPC file, or a directory of `gn{k}.nrpc`, for loaded preconditioners.
    #[arg(long)]
    factor: Option<PathBuf>,
    /// Gauss-Newton iterations of depth-only refinement.
    #[arg(long)]
    refine_iters: Option<usize>,
}

impl TrackerFlags {
    fn resolve(&self, global: &Global) -> Result<TrackerConfig, CliError> {
        let mut cfg = match &global.config {
            Some(p) => TrackerConfig::load(p)?,
            None => TrackerConfig::default(),
        };
        if let Some(v) = self.gn_iters {
            cfg.gn_iters = v;
        }
        if let Some(v) = self.pcg_iters {
            cfg.pcg_iters = v;
        }
        if let Some(v) = self.pcg_tol {
            cfg.pcg_tol = v;
        }
        if let Some(v) = self.preconditioner {
            cfg.preconditioner = v;
        }
        if let Some(v) = &self.factor {
            cfg.factor_path = Some(v.clone());
        }
        if let Some(v) = self.refine_iters {
            cfg.refine_iters = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Frame-pair inputs: a scene directory or explicit frame directories.
#[derive(Args, Debug)]
pub struct PairArgs {
    /// Scene directory with `source/`, `target/` and `gt_flow.json`.
    #[arg(long, conflicts_with_all = ["source", "target"])]
    scene: Option<PathBuf>,
    /// Source frame directory (`color.png`, `depth.png`, `intrinsics.json`).
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    /// Target frame directory.
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
    /// Ground-truth node flow; EPE is printed when present.
    #[arg(long)]
    gt: Option<PathBuf>,
}

struct Pair {
    source: Frame,
    target: Frame,
    gt: Option<Vec<nalgebra::Vector3<f64>>>,
}

impl PairArgs {
    fn load(&self) -> Result<Pair, CliError> {
        let mut pair = match (&self.scene, &self.source, &self.target) {
            (Some(dir), _, _) => {
                let s = load_scene(dir)?;
                Pair { source: s.source, target: s.target, gt: Some(s.gt_flow) }
            }
            (None, Some(s), Some(t)) => Pair { source: load_frame_dir(s)?, target: load_frame_dir(t)?, gt: None },
            _ => return Err(CliError::Usage("give --scene DIR or both --source DIR and --target DIR".into())),
        };
        if let Some(p) = &self.gt {
            pair.gt = Some(load_gt_flow(p)?);
        }
        Ok(pair)
    }
}

fn out_dir(global: &Global) -> Result<&Path, CliError> {
    let dir = global.out.as_deref().ok_or_else(|| CliError::Usage("--out DIR is required".into()))?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Core(io_error(dir, e)))?;
    Ok(dir)
}

fn io_error(path: &Path, e: std::io::Error) -> warpgraph::Error {
    warpgraph::Error::Io { path: path.to_path_buf(), source: e }
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| CliError::Core(io_error(path, e)))
}

fn print_eval(label: &str, r: &EvalReport) {
    println!(
        "{label}: epe_mean={} epe_median={} flow_loss={} valid_nodes={}",
        r.epe_mean, r.epe_median, r.flow_loss, r.valid_nodes
    );
}

fn save_result(dir: &Path, stem: &str, r: &TrackingResult) -> CmdResult {
    r.graph.save_json(&dir.join(format!("{stem}graph.json")))?;
    r.telemetry().save(&dir.join(format!("{stem}telemetry.json")))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[command(flatten)]
    tracker: TrackerFlags,
    /// NRFM feature map of the source frame; replaces the intensity fallback.
    #[arg(long)]
    source_features: Option<PathBuf>,
    /// NRFM feature map of the target frame.
    #[arg(long, requires = "source_features")]
    target_features: Option<PathBuf>,
    /// Write each Gauss-Newton system to `OUT/systems/gn{k}.nrab`.
    #[arg(long)]
    dump_systems: bool,
    /// Follow tracking with depth-only refinement.
    #[arg(long)]
    refine: bool,
}

pub fn track(global: &Global, args: TrackArgs) -> CmdResult {
    let mut cfg = args.tracker.resolve(global)?;
    let out = out_dir(global)?;
    let pair = args.pair.load()?;
    let features = match (&args.source_features, &args.target_features) {
        (Some(s), Some(t)) => {
            cfg.feature_source = FeatureSource::LoadedNrfm;
            Some((FeatureMap::load(s)?, FeatureMap::load(t)?))
        }
        (Some(_), None) => return Err(CliError::Usage("--source-features needs --target-features".into())),
        _ => None,
    };
    if args.dump_systems {
        cfg.dump_dir = Some(out.join("systems"));
    }
    let result = run_track(&pair.source, &pair.target, features.as_ref().map(|(s, t)| (s, t)), &cfg)?;
    save_result(out, "", &result)?;
    println!("energy: {:?}", result.energy_history);
    if let Some(gt) = &pair.gt {
        print_eval("track", &evaluate_graph(&result.graph, gt)?);
    }
    if args.refine {
        cfg.dump_dir = None;
        let refined = refine_with_depth(&pair.source, &pair.target, &result.graph, &cfg)?;
        save_result(out, "refined_", &refined)?;
        if let Some(gt) = &pair.gt {
            print_eval("refine", &evaluate_graph(&refined.graph, gt)?);
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[command(flatten)]
    tracker: TrackerFlags,
    /// Graph JSON to refine, usually from `track`.
    #[arg(long)]
    graph: PathBuf,
}

pub fn refine(global: &Global, args: RefineArgs) -> CmdResult {
    let cfg = args.tracker.resolve(global)?;
    let out = out_dir(global)?;
    let pair = args.pair.load()?;
    let coarse = DeformGraph::load_json(&args.graph)?;
    let refined = refine_with_depth(&pair.source, &pair.target, &coarse, &cfg)?;
    save_result(out, "", &refined)?;
    println!("energy: {:?}", refined.energy_history);
    if let Some(gt) = &pair.gt {
        print_eval("refine", &evaluate_graph(&refined.graph, gt)?);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Directory of `*.nrab` systems; the file stem is the system id.
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated preconditioner kinds.
    #[arg(long, value_parser = parse_kinds, default_value = "identity,block-jacobi,ic0")]
    kinds: KindList,
    /// Absolute residual tolerance.
    #[arg(long, default_value_t = DEFAULT_BENCH_TOL)]
    tol: f64,
    /// PCG iteration cap per solve.
    #[arg(long, default_value_t = DEFAULT_BENCH_MAX_ITERS)]
    max_iters: usize,
    /// Directory of `{id}.{dense|sparse|blockdiag}.nrpc` factors for loaded kinds.
    #[arg(long)]
    factors: Option<PathBuf>,
    /// Skip condition-number estimation.
    #[arg(long)]
    no_kappa: bool,
    /// Also write the mean residual curves as SVG.
    #[arg(long)]
    svg: bool,
}

fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Core(io_error(dir, e)))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Core(io_error(dir, e)))?.path();
        if path.extension().is_some_and(|x| x == "nrab") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn bench_pcg(global: &Global, args: BenchArgs) -> CmdResult {
    let out = out_dir(global)?;
    let files = corpus_files(&args.corpus)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!("{}: no .nrab files", args.corpus.display())));
    }
    let mut systems = Vec::with_capacity(files.len());
    let mut load_failures = 0;
    for path in &files {
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        match load_system(path) {
            Ok((a, b)) => systems.push(BenchSystem { id, a, b }),
            Err(e) => {
                load_failures += 1;
                eprintln!("{}", serde_json::json!({ "warning": { "system": id, "message": e.to_string() } }));
            }
        }
    }
    let opts = BenchOptions {
        kinds: args.kinds,
        max_iters: args.max_iters,
        tol: Tolerance::Absolute(args.tol),
        estimate_kappa: !args.no_kappa,
        factor_dir: args.factors,
    };
    let report = run_bench(&systems, &opts);
    for f in &report.failures {
        eprintln!(
            "{}",
            serde_json::json!({ "warning": { "system": f.system, "kind": f.kind.name(), "message": f.message } })
        );
    }
    write_text(&out.join("bench_rows.csv"), &report.rows_csv())?;
    write_text(&out.join("bench_summary.csv"), &report.summary_csv())?;
    write_text(&out.join("bench_curves.csv"), &report.curves_csv())?;
    if args.svg {
        write_text(&out.join("bench_curves.svg"), &report.curves_svg())?;
    }
    for s in report.summary() {
        println!(
            "{}: systems={} converged={} mean_iters={:.1} median_iters={:.1} mean_kappa={:.4e} median_kappa={:.4e}",
            s.kind, s.systems, s.converged, s.mean_iterations, s.median_iterations, s.mean_kappa, s.median_kappa
        );
    }
    if report.rows.is_empty() {
        return Err(CliError::Internal(format!(
            "every solve failed ({} unreadable files, {} failed solves)",
            load_failures,
            report.failures.len()
        )));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    /// Seeds: `0..4`, `0..=3`, `1,5,9` or a single value.
    #[arg(long, value_parser = parse_seeds, default_value = "0..4")]
    seeds: SeedList,
    /// Jump levels: `2,4,8,16`.
    #[arg(long, value_parser = parse_levels, default_value = "2,4,8,16")]
    levels: LevelList,
}

fn scene_dir_name(level: JumpLevel, seed: u64) -> String {
    format!("{level}_s{seed:03}")
}

pub fn gen_synth(global: &Global, args: GenSynthArgs) -> CmdResult {
    let out = out_dir(global)?;
    for &level in &args.levels {
        for &seed in &args.seeds {
            let scene = generate_scene(seed, &SceneConfig::with_jump(level))?;
            let dir = out.join(scene_dir_name(level, seed));
            save_scene(&scene, &dir)?;
            println!("{}: zero_motion_epe={}", dir.display(), scene.zero_motion_epe());
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// Probes per Jacobian component.
    #[arg(long, default_value_t = DEFAULT_PROBES)]
    probes: usize,
}

pub fn grad_check(global: &Global, args: GradCheckArgs) -> CmdResult {
    let results = full_suite(global.seed, args.probes)?;
    let mut csv = String::from("# warpgraph-csv v1\ncomponent,probes,max_rel_err,threshold,passed\n");
    for r in &results {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {}: max_rel_err={:e} threshold={:e} probes={}", r.component, r.max_rel_err, r.threshold, r.probes);
        csv.push_str(&format!("{},{},{:e},{:e},{}\n", r.component, r.probes, r.max_rel_err, r.threshold, r.passed()));
    }
    if global.out.is_some() {
        write_text(&out_dir(global)?.join("gradcheck.csv"), &csv)?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.component.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("gradient check failed for {}", failed.join(", "))))
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Graph JSON from `track` or `refine`.
    #[arg(long)]
    result: PathBuf,
    /// `gt_flow.json`, or a scene directory containing one.
    #[arg(long)]
    gt: PathBuf,
}

pub fn eval(global: &Global, args: EvalArgs) -> CmdResult {
    let g = DeformGraph::load_json(&args.result)?;
    let gt_path = if args.gt.is_dir() { args.gt.join("gt_flow.json") } else { args.gt.clone() };
    let report = evaluate_graph(&g, &load_gt_flow(&gt_path)?)?;
    print_eval("eval", &report);
    if global.out.is_some() {
        let json = serde_json::json!({
            "epe_mean": report.epe_mean,
            "epe_median": report.epe_median,
            "flow_loss": report.flow_loss,
            "valid_nodes": report.valid_nodes,
        });
        write_text(&out_dir(global)?.join("eval.json"), &format!("{json:#}\n"))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    /// Directory of scene directories to track; synthetic scenes are
    /// generated from `--seeds` and `--levels` otherwise.
    #[arg(long)]
    scenes: Option<PathBuf>,
    /// Seeds of the generated scenes.
    #[arg(long, value_parser = parse_seeds, default_value = "0..5")]
    seeds: SeedList,
    #[arg(long, value_parser = parse_levels, default_value = "2,4,8,16")]
    levels: LevelList,
    #[command(flatten)]
    tracker: TrackerFlags,
    /// Also write the exact-inverse dense factor `{id}.dense.nrpc` of every system.
    #[arg(long)]
    oracle_factors: bool,
}

pub fn dump_systems(global: &Global, args: DumpArgs) -> CmdResult {
    let base = args.tracker.resolve(global)?;
    let out = out_dir(global)?;
    let mut pairs: Vec<(String, Frame, Frame)> = Vec::new();
    match &args.scenes {
        Some(dir) => {
            let entries = std::fs::read_dir(dir).map_err(|e| CliError::Core(io_error(dir, e)))?;
            let mut dirs: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("meta.json").is_file())
                .collect();
            dirs.sort();
            for d in dirs {
                let s = load_scene(&d)?;
                let name = d.file_name().unwrap_or_default().to_string_lossy().into_owned();
                pairs.push((name, s.source, s.target));
            }
        }
        None => {
            for &level in &args.levels {
                for &seed in &args.seeds {
                    let s = generate_scene(seed, &SceneConfig::with_jump(level))?;
                    pairs.push((scene_dir_name(level, seed), s.source, s.target));
                }
            }
        }
    }
    let mut count = 0;
    for (name, source, target) in &pairs {
        let cfg = TrackerConfig {
            dump_dir: Some(out.to_path_buf()),
            dump_prefix: format!("{name}_"),
            ..base.clone()
        };
        let r = run_track(source, target, None, &cfg)?;
        for path in &r.dumped_systems {
            count += 1;
            if args.oracle_factors {
                let (a, _) = load_system(path)?;
                let id = path.file_stem().unwrap_or_default().to_string_lossy();
                let name = factor_file_name(&id, PreconditionerKind::LoadedDense).expect("loaded kind has a file name");
                dense_inverse_factor(&a.to_dense())?.save(&out.join(name))?;
            }
        }
    }
    println!("wrote {count} systems to {}", out.display());
    Ok(())
}
