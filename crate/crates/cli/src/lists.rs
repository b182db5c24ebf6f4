//! Parsers for list-valued flags.

use std::str::FromStr;

use warpgraph::solver::PreconditionerKind;
use warpgraph::synth::JumpLevel;

/// `a..b` (half-open), `a..=b`, a comma list, or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}"));
    if let Some((a, b)) = s.split_once("..=") {
        let (a, b) = (num(a)?, num(b)?);
        return if a <= b { Ok((a..=b).collect()) } else { Err(format!("empty seed range {s:?}")) };
    }
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        return if a < b { Ok((a..b).collect()) } else { Err(format!("empty seed range {s:?}")) };
    }
    s.split(',').map(num).collect()
}

/// Comma list of jump levels: `2,16` or `J2,J16`.
pub fn parse_levels(s: &str) -> Result<Vec<JumpLevel>, String> {
    s.split(',').map(|t| JumpLevel::from_str(t).map_err(|e| e.to_string())).collect()
}

/// Comma list of preconditioner names.
pub fn parse_kinds(s: &str) -> Result<Vec<PreconditionerKind>, String> {
    s.split(',')
        .map(|t| PreconditionerKind::from_str(t.trim()).map_err(|e| e.to_string()))
        .collect()
}
