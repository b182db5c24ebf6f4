//! Preconditioner benchmarking over a corpus of `[A, b]` systems.
//!
//! Every system is solved once per requested preconditioner kind. Rows keep
//! corpus order and then kind order regardless of the thread count; timing
//! columns are the only non-deterministic output and carry a `_nondet` suffix.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::solver::{
    condition_number, pcg_solve_with, BlockSparseMatrix, LoadedFactor, PcgOptions, Preconditioner, PreconditionerKind,
    Tolerance,
};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "# warpgraph-csv v1";
pub const DEFAULT_BENCH_TOL: f64 = 1e-6;
pub const DEFAULT_BENCH_MAX_ITERS: usize = 2000;

#[derive(Clone, Debug)]
pub struct BenchSystem {
    pub id: String,
    pub a: BlockSparseMatrix,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub kinds: Vec<PreconditionerKind>,
    pub max_iters: usize,
    pub tol: Tolerance,
    pub estimate_kappa: bool,
    /// Loaded kinds read `{id}.{kind suffix}.nrpc` from here.
    pub factor_dir: Option<PathBuf>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            kinds: vec![
                PreconditionerKind::Identity,
                PreconditionerKind::BlockJacobi,
                PreconditionerKind::IncompleteCholesky,
            ],
            max_iters: DEFAULT_BENCH_MAX_ITERS,
            tol: Tolerance::Absolute(DEFAULT_BENCH_TOL),
            estimate_kappa: true,
            factor_dir: None,
        }
    }
}

/// File name of the factor for system `id` and a loaded `kind`.
pub fn factor_file_name(id: &str, kind: PreconditionerKind) -> Option<String> {
    let suffix = match kind {
        PreconditionerKind::LoadedDense => "dense",
        PreconditionerKind::LoadedSparse => "sparse",
        PreconditionerKind::LoadedBlockDiagonal => "blockdiag",
        _ => return None,
    };
    Some(format!("{id}.{suffix}.nrpc"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub system: String,
    pub kind: PreconditionerKind,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    /// `NaN` when estimation was skipped.
    pub kappa: f64,
    pub setup_time: f64,
    pub solve_time: f64,
    pub residual_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchFailure {
    pub system: String,
    pub kind: PreconditionerKind,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: PreconditionerKind,
    pub systems: usize,
    pub converged: usize,
    pub mean_iterations: f64,
    pub median_iterations: f64,
    pub mean_kappa: f64,
    pub median_kappa: f64,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub kinds: Vec<PreconditionerKind>,
    pub rows: Vec<BenchRow>,
    pub failures: Vec<BenchFailure>,
}

fn prepare(kind: PreconditionerKind, sys: &BenchSystem, factor_dir: Option<&Path>) -> Result<Preconditioner> {
    match factor_file_name(&sys.id, kind) {
        None => Preconditioner::build(kind, &sys.a),
        Some(name) => {
            let dir = factor_dir
                .ok_or_else(|| Error::InvalidConfig(format!("{kind} needs a factor directory")))?;
            let f = LoadedFactor::load(&dir.join(name))?;
            if f.n() != sys.a.n() {
                return Err(Error::DimensionMismatch { expected: sys.a.n(), got: f.n() });
            }
            if kind == PreconditionerKind::LoadedSparse && !f.matches_pattern(&sys.a) {
                return Err(Error::format("sparse factor has entries outside the system pattern"));
            }
            Ok(Preconditioner::Loaded(f))
        }
    }
}

fn bench_one(sys: &BenchSystem, kind: PreconditionerKind, opts: &BenchOptions) -> Result<BenchRow> {
    let clock = Stopwatch::start();
    let m = prepare(kind, sys, opts.factor_dir.as_deref())?;
    let setup_time = clock.seconds();
    let (_, report) = pcg_solve_with(&sys.a, &sys.b, &m, &PcgOptions { max_iters: opts.max_iters, tol: opts.tol })?;
    let kappa = if opts.estimate_kappa { condition_number(&sys.a, &m)?.kappa } else { f64::NAN };
    Ok(BenchRow {
        system: sys.id.clone(),
        kind,
        iterations: report.iterations,
        converged: report.converged,
        final_residual: report.final_residual(),
        kappa,
        setup_time,
        solve_time: report.wall_time,
        residual_history: report.residual_history,
    })
}

/// Solves every system with every kind. Systems run in parallel; a failing
/// `(system, kind)` pair is recorded and skipped.
pub fn run_bench(systems: &[BenchSystem], opts: &BenchOptions) -> BenchReport {
    let per_system = crate::par::map_collect(systems, |sys| {
        opts.kinds
            .iter()
            .map(|&kind| {
                bench_one(sys, kind, opts).map_err(|e| BenchFailure {
                    system: sys.id.clone(),
                    kind,
                    message: e.to_string(),
                })
            })
            .collect::<Vec<_>>()
    });
    let mut report = BenchReport { kinds: opts.kinds.clone(), ..Default::default() };
    for outcome in per_system.into_iter().flatten() {
        match outcome {
            Ok(row) => report.rows.push(row),
            Err(f) => report.failures.push(f),
        }
    }
    report
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    if s.len() % 2 == 1 { s[k] } else { 0.5 * (s[k - 1] + s[k]) }
}

impl BenchReport {
    pub fn rows_for(&self, kind: PreconditionerKind) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    pub fn summary(&self) -> Vec<KindSummary> {
        self.kinds
            .iter()
            .map(|&kind| {
                let rows: Vec<&BenchRow> = self.rows_for(kind).collect();
                let iters: Vec<f64> = rows.iter().map(|r| r.iterations as f64).collect();
                let kappas: Vec<f64> = rows.iter().map(|r| r.kappa).filter(|k| k.is_finite()).collect();
                KindSummary {
                    kind,
                    systems: rows.len(),
                    converged: rows.iter().filter(|r| r.converged).count(),
                    mean_iterations: mean(&iters),
                    median_iterations: median(&iters),
                    mean_kappa: mean(&kappas),
                    median_kappa: median(&kappas),
                }
            })
            .collect()
    }

    /// Mean absolute residual per iteration and kind. A solve that stopped
    /// early contributes its final residual to later iterations.
    pub fn mean_curves(&self) -> Vec<(PreconditionerKind, Vec<f64>)> {
        self.kinds
            .iter()
            .map(|&kind| {
                let hist: Vec<&Vec<f64>> = self.rows_for(kind).map(|r| &r.residual_history).collect();
                let len = hist.iter().map(|h| h.len()).max().unwrap_or(0);
                let curve = (0..len)
                    .map(|k| mean(&hist.iter().map(|h| h[k.min(h.len() - 1)]).collect::<Vec<_>>()))
                    .collect();
                (kind, curve)
            })
            .collect()
    }

    pub fn rows_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\nsystem,kind,iterations,converged,final_residual,kappa,setup_time_nondet,solve_time_nondet\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:e},{:e},{:e},{:e}",
                r.system, r.kind, r.iterations, r.converged, r.final_residual, r.kappa, r.setup_time, r.solve_time
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\nkind,systems,converged,mean_iterations,median_iterations,mean_kappa,median_kappa\n");
        for k in self.summary() {
            let _ = writeln!(
                s,
                "{},{},{},{:e},{:e},{:e},{:e}",
                k.kind, k.systems, k.converged, k.mean_iterations, k.median_iterations, k.mean_kappa, k.median_kappa
            );
        }
        s
    }

    pub fn curves_csv(&self) -> String {
        let curves = self.mean_curves();
        let len = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
        let mut s = format!("{CSV_HEADER}\niteration");
        for (kind, _) in &curves {
            let _ = write!(s, ",{kind}");
        }
        s.push('\n');
        for k in 0..len {
            let _ = write!(s, "{k}");
            for (_, c) in &curves {
                match c.get(k) {
                    Some(v) => {
                        let _ = write!(s, ",{v:e}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Mean residual curves on a log-scale residual axis.
    pub fn curves_svg(&self) -> String {
        render_curves_svg(&self.mean_curves())
    }
}

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub fn render_curves_svg(curves: &[(PreconditionerKind, Vec<f64>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 170.0, 20.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let positive = curves.iter().flat_map(|(_, c)| c.iter().copied()).filter(|v| *v > 0.0 && v.is_finite());
    let (lo, hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (dlo, dhi) = if lo.is_finite() {
        let (a, b) = (lo.log10().floor(), hi.log10().ceil());
        (a, if b > a { b } else { a + 1.0 })
    } else {
        (-6.0, 0.0)
    };
    let max_iter = curves.iter().map(|(_, c)| c.len().saturating_sub(1)).max().unwrap_or(0).max(1) as f64;
    let x_of = |k: f64| left + pw * k / max_iter;
    let y_of = |v: f64| top + ph * (dhi - v.max(10f64.powf(dlo)).log10()) / (dhi - dlo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    let mut d = dlo as i32;
    while d as f64 <= dhi {
        let y = y_of(10f64.powi(d));
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, left - 6.0, y + 4.0);
        d += 1;
    }
    let step = nice_step(max_iter);
    let mut k = 0.0;
    while k <= max_iter {
        let x = x_of(k);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{k}</text>"#, top + ph + 18.0);
        k += step;
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">PCG iteration</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">mean residual</text>"#, top + ph / 2.0, top + ph / 2.0);
    for (i, (kind, c)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c.iter().enumerate().map(|(k, v)| format!("{:.2},{:.2}", x_of(k as f64), y_of(*v))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = top + 16.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{kind}</text>"#, lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 8.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_system(id: &str) -> BenchSystem {
        BenchSystem { id: id.into(), a: BlockSparseMatrix::identity(3), b: (0..18).map(|i| i as f64 - 4.0).collect() }
    }

    #[test]
    fn identity_corpus_converges_in_one_iteration() {
        let systems = vec![identity_system("a"), identity_system("b")];
        let report = run_bench(&systems, &BenchOptions::default());
        assert!(report.failures.is_empty());
        assert_eq!(report.rows.len(), 6);
        assert!(report.rows.iter().all(|r| r.iterations == 1 && r.converged));
        assert_eq!(report.rows[0].system, "a");
        assert_eq!(report.rows[3].kind, PreconditionerKind::Identity);
        for k in report.summary() {
            assert_eq!(k.mean_iterations, 1.0);
            assert!((k.mean_kappa - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_factor_is_a_failure_not_a_panic() {
        let opts = BenchOptions { kinds: vec![PreconditionerKind::LoadedDense], ..Default::default() };
        let report = run_bench(&[identity_system("x")], &opts);
        assert!(report.rows.is_empty());
        assert_eq!(report.failures.len(), 1);
    }

    #[test]
    fn csv_has_versioned_header_and_one_row_per_pair() {
        let report = run_bench(&[identity_system("s0")], &BenchOptions::default());
        let csv = report.rows_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].ends_with("setup_time_nondet,solve_time_nondet"));
        assert_eq!(lines.len(), 2 + 3);
        assert!(report.curves_csv().starts_with(CSV_HEADER));
        assert!(report.summary_csv().lines().count() == 2 + 3);
    }

    #[test]
    fn curves_pad_with_final_residual() {
        let mk = |hist: Vec<f64>| BenchRow {
            system: "s".into(),
            kind: PreconditionerKind::Identity,
            iterations: hist.len() - 1,
            converged: true,
            final_residual: *hist.last().unwrap(),
            kappa: 1.0,
            setup_time: 0.0,
            solve_time: 0.0,
            residual_history: hist,
        };
        let report = BenchReport {
            kinds: vec![PreconditionerKind::Identity],
            rows: vec![mk(vec![4.0, 2.0, 1.0]), mk(vec![2.0, 0.0])],
            failures: vec![],
        };
        assert_eq!(report.mean_curves()[0].1, vec![3.0, 1.0, 0.5]);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = render_curves_svg(&[
            (PreconditionerKind::Identity, vec![1.0, 0.1, 1e-3]),
            (PreconditionerKind::BlockJacobi, vec![1.0, 1e-7]),
        ]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("1e-7"));
    }

    #[test]
    fn median_of_even_count() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
