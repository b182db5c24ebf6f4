//! Condition-number estimation for `M^-1 A` by Lanczos.
//!
//! `M^-1 A` is self-adjoint in the `A` inner product, so Lanczos runs on it
//! directly with `<u, v>_A = u^T A v`. Its spectrum equals that of the split
//! form `L^T A L` whenever `M^-1 = L L^T`, without ever forming `L`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{dot, LinearOperator, Preconditioner};
use crate::{Error, Result};

pub const LANCZOS_MAX_STEPS: usize = 200;
pub const LANCZOS_TOL: f64 = 1e-6;
const CHECK_EVERY: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionEstimate {
    pub kappa: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub steps: usize,
    /// Ritz extremes stabilised or the Krylov space became invariant.
    pub converged: bool,
}

/// `kappa(M^-1 A)` with the default step budget and tolerance.
pub fn condition_number<A: LinearOperator + ?Sized>(a: &A, m: &Preconditioner) -> Result<ConditionEstimate> {
    if let Some(md) = m.dim() {
        if md != a.dim() {
            return Err(Error::DimensionMismatch { expected: a.dim(), got: md });
        }
    }
    lanczos_extremes(a, |r, z| m.apply(r, z), LANCZOS_MAX_STEPS, LANCZOS_TOL)
}

fn ritz_extremes(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let ev = SymmetricEigen::new(t).eigenvalues;
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Extreme eigenvalues of `T = P A` for SPD `A` and symmetric `P` (applied by
/// `precond`). Each step costs one `A` product and one `P` product; the basis
/// is fully reorthogonalised in the `A` inner product.
pub fn lanczos_extremes<A, P>(a: &A, precond: P, max_steps: usize, tol: f64) -> Result<ConditionEstimate>
where
    A: LinearOperator + ?Sized,
    P: Fn(&[f64], &mut [f64]),
{
    let n = a.dim();
    if n == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    let max_steps = max_steps.clamp(1, n);
    // Fixed, non-degenerate start vector.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.618_034).sin()).collect();
    let mut u = vec![0.0; n];
    a.apply(&v, &mut u);
    let s = dot(&v, &u);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::NotSpd);
    }
    let s = s.sqrt();
    v.iter_mut().for_each(|x| *x /= s);
    u.iter_mut().for_each(|x| *x /= s);

    // v_j and u_j = A v_j
    let mut basis: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut aw = vec![0.0; n];
    let mut prev: Option<(f64, f64)> = None;
    let mut converged = false;
    let mut scale = 0.0f64;

    loop {
        precond(&u, &mut w);
        let aj = dot(&w, &u);
        alpha.push(aj);
        scale = scale.max(aj.abs());
        basis.push((v, u));
        for _ in 0..2 {
            for (vi, ui) in &basis {
                let c = dot(&w, ui);
                for k in 0..n {
                    w[k] -= c * vi[k];
                }
            }
        }
        // Recomputed rather than updated alongside `w`: near breakdown the
        // division by a tiny beta would amplify the drift between the two.
        a.apply(&w, &mut aw);
        let steps = alpha.len();
        let b2 = dot(&w, &aw);
        let bj = if b2 > 0.0 { b2.sqrt() } else { 0.0 };
        let invariant = !(bj > 1e-12 * scale.max(f64::MIN_POSITIVE)) || steps == n;
        let last = invariant || steps == max_steps;
        if last || steps % CHECK_EVERY == 0 {
            let (lo, hi) = ritz_extremes(&alpha, &beta);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonFinite(None));
            }
            let stable = prev.is_some_and(|(plo, phi)| {
                (lo - plo).abs() <= tol * lo.abs() && (hi - phi).abs() <= tol * hi.abs()
            });
            if invariant || stable || last {
                converged = converged || invariant || stable;
                return Ok(ConditionEstimate {
                    kappa: hi / lo,
                    lambda_min: lo,
                    lambda_max: hi,
                    steps,
                    converged,
                });
            }
            prev = Some((lo, hi));
        }
        beta.push(bj);
        v = w.iter().map(|x| x / bj).collect();
        u = aw.iter().map(|x| x / bj).collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let est = condition_number(&a, &Preconditioner::Identity).unwrap();
        assert!((est.kappa - 4.0).abs() < 1e-12, "{est:?}");
        assert!(est.converged);
    }

    #[test]
    fn exact_inverse_gives_one() {
        let a = DMatrix::from_fn(12, 12, |i, j| if i == j { 3.0 + i as f64 } else { 0.3 / (1.0 + (i as f64 - j as f64).abs()) });
        let inv = a.clone().try_inverse().unwrap();
        let est = lanczos_extremes(&a, |r, z| inv.apply(r, z), 200, 1e-6).unwrap();
        assert!((est.kappa - 1.0).abs() < 1e-10, "{est:?}");
        assert_eq!(est.steps, 1);
    }
}
