//! Reverse-mode gradients through linear solves.
//!
//! For a converged solve `A x = b` and upstream gradient `g = dL/dx`:
//! `dL/db = A^-1 g` (one more PCG solve) and `dL/dA = -(dL/db) x^T`.
//! For a truncated solve the recorded PCG recurrence is differentiated
//! step by step instead, because `x_k` is then not `A^-1 b`.

use nalgebra::DMatrix;

use crate::solver::{dot, pcg_solve_with, Block, BlockSparseMatrix, LinearOperator, PcgOptions, Preconditioner, Tolerance, BLOCK_DIM};
use crate::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Gradients of a scalar loss with respect to `b` and `A` of a solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveGradients {
    pub grad_b: Vec<f64>,
    /// The solution the gradient was taken at.
    pub x: Vec<f64>,
}

impl SolveGradients {
    /// `-grad_b x^T`, treating every entry of `A` as independent.
    pub fn grad_a_dense(&self) -> DMatrix<f64> {
        let n = self.x.len();
        DMatrix::from_fn(n, n, |i, j| -self.grad_b[i] * self.x[j])
    }

    /// `-grad_b x^T` restricted to the stored lower blocks of `a`, in
    /// canonical block order. An off-diagonal stored entry `(i, j)` also
    /// stands for `(j, i)` and receives `g(i, j) + g(j, i)`; diagonal blocks
    /// receive `g` entrywise.
    pub fn grad_a_sparse(&self, a: &BlockSparseMatrix) -> Result<Vec<(usize, usize, Block)>> {
        if a.n() != self.x.len() {
            return Err(Error::DimensionMismatch { expected: a.n(), got: self.x.len() });
        }
        let g = |i: usize, j: usize| -self.grad_b[i] * self.x[j];
        Ok(a.lower_blocks()
            .map(|(r, c, _)| {
                let blk = Block::from_fn(|i, j| {
                    let (gi, gj) = (BLOCK_DIM * r + i, BLOCK_DIM * c + j);
                    if r == c {
                        g(gi, gj)
                    } else {
                        g(gi, gj) + g(gj, gi)
                    }
                });
                (r, c, blk)
            })
            .collect())
    }
}

/// Exact adjoint of a converged solve: `grad_b` solves `A grad_b = grad_x`.
pub fn solve_adjoint<A: LinearOperator + ?Sized>(
    a: &A,
    x: &[f64],
    grad_x: &[f64],
    m: &Preconditioner,
    tol: f64,
) -> Result<SolveGradients> {
    let n = a.dim();
    for len in [x.len(), grad_x.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let opts = PcgOptions {
        max_iters: 10 * n.max(10),
        tol: Tolerance::Relative(tol),
    };
    let (grad_b, _) = pcg_solve_with(a, grad_x, m, &opts)?;
    Ok(SolveGradients { grad_b, x: x.to_vec() })
}

/// State recorded by [`pcg_forward`] for one PCG step `k`.
struct Step {
    p: Vec<f64>,
    q: Vec<f64>,
    rho: f64,
    sigma: f64,
    alpha: f64,
}

struct Tape {
    steps: Vec<Step>,
    /// `r_k` and `z_k` for `k = 0..=K`.
    r: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    rho: Vec<f64>,
    x: Vec<f64>,
}

/// Exactly `k` PCG steps from `x0 = 0` with no stopping test.
fn pcg_forward<A: LinearOperator + ?Sized>(a: &A, b: &[f64], m: &Preconditioner, k: usize) -> Result<Tape> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut rho = dot(&r, &z);
    let mut p = z.clone();
    let mut tape = Tape {
        steps: Vec::with_capacity(k),
        r: vec![r.clone()],
        z: vec![z.clone()],
        rho: vec![rho],
        x: Vec::new(),
    };
    for it in 0..k {
        let mut q = vec![0.0; n];
        a.apply(&p, &mut q);
        let sigma = dot(&p, &q);
        if !(sigma > 0.0) {
            return Err(Error::Breakdown { iteration: it, curvature: sigma });
        }
        let alpha = rho / sigma;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        m.apply(&r, &mut z);
        let rho_next = dot(&r, &z);
        let beta = rho_next / rho;
        let p_next: Vec<f64> = z.iter().zip(&p).map(|(zi, pi)| zi + beta * pi).collect();
        tape.steps.push(Step { p, q, rho, sigma, alpha });
        tape.r.push(r.clone());
        tape.z.push(z.clone());
        tape.rho.push(rho_next);
        p = p_next;
        rho = rho_next;
    }
    tape.x = x;
    Ok(tape)
}

/// The `k`-step PCG map `b -> x_k` used by [`unrolled_pcg_grad`].
pub fn pcg_fixed_steps<A: LinearOperator + ?Sized>(a: &A, b: &[f64], m: &Preconditioner, k: usize) -> Result<Vec<f64>> {
    check_dims(a, b.len(), m)?;
    Ok(pcg_forward(a, b, m, k)?.x)
}

fn check_dims<A: LinearOperator + ?Sized>(a: &A, len: usize, m: &Preconditioner) -> Result<()> {
    let n = a.dim();
    if len != n {
        return Err(Error::DimensionMismatch { expected: n, got: len });
    }
    if let Some(md) = m.dim() {
        if md != n {
            return Err(Error::DimensionMismatch { expected: n, got: md });
        }
    }
    Ok(())
}

/// Gradients of `L(x_k)` through `k` recorded PCG steps, holding the
/// preconditioner fixed. Returns `(dL/db, dL/dA)` with `A` treated as a
/// dense matrix of independent entries.
pub fn unrolled_pcg_grad<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    m: &Preconditioner,
    k: usize,
    grad_x: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_dims(a, b.len(), m)?;
    check_dims(a, grad_x.len(), m)?;
    if k == 0 {
        return Err(Error::InvalidConfig("unrolled PCG needs at least one step".into()));
    }
    let n = b.len();
    let tape = pcg_forward(a, b, m, k)?;

    let mut grad_a = DMatrix::zeros(n, n);
    let xb = grad_x.to_vec();
    let mut rb = vec![0.0; n];
    let mut pb = vec![0.0; n];
    let mut rho_b = 0.0;
    let mut zb = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut qb = vec![0.0; n];

    for it in (0..k).rev() {
        let st = &tape.steps[it];
        // p_{it+1} = z_{it+1} + beta p_it, beta = rho_{it+1} / rho_it,
        // rho_{it+1} = r_{it+1} . z_{it+1}, z_{it+1} = M r_{it+1}
        let mut pb_k = vec![0.0; n];
        let mut rho_b_k = 0.0;
        if it + 1 < k {
            let rho_next = tape.rho[it + 1];
            let beta = rho_next / st.rho;
            zb.copy_from_slice(&pb);
            let beta_b = dot(&pb, &st.p);
            for i in 0..n {
                pb_k[i] += beta * pb[i];
            }
            rho_b += beta_b / st.rho;
            rho_b_k -= beta_b * rho_next / (st.rho * st.rho);
            let (r1, z1) = (&tape.r[it + 1], &tape.z[it + 1]);
            for i in 0..n {
                zb[i] += rho_b * r1[i];
                rb[i] += rho_b * z1[i];
            }
            m.apply(&zb, &mut tmp);
            for i in 0..n {
                rb[i] += tmp[i];
            }
        }
        // r_{it+1} = r_it - alpha q_it ; x_{it+1} = x_it + alpha p_it
        let alpha_b = -dot(&rb, &st.q) + dot(&xb, &st.p);
        for i in 0..n {
            qb[i] = -st.alpha * rb[i];
            pb_k[i] += st.alpha * xb[i];
        }
        // alpha = rho_it / sigma ; sigma = p . q
        rho_b_k += alpha_b / st.sigma;
        let sigma_b = -alpha_b * st.rho / (st.sigma * st.sigma);
        for i in 0..n {
            pb_k[i] += sigma_b * st.q[i];
            qb[i] += sigma_b * st.p[i];
        }
        // q = A p
        a.apply(&qb, &mut tmp);
        for i in 0..n {
            pb_k[i] += tmp[i];
        }
        for j in 0..n {
            let pj = st.p[j];
            if pj != 0.0 {
                for i in 0..n {
                    grad_a[(i, j)] += qb[i] * pj;
                }
            }
        }
        pb = pb_k;
        rho_b = rho_b_k;
    }
    // p_0 = z_0, rho_0 = r_0 . z_0, z_0 = M r_0, r_0 = b
    for i in 0..n {
        zb[i] = pb[i] + rho_b * tape.r[0][i];
        rb[i] += rho_b * tape.z[0][i];
    }
    m.apply(&zb, &mut tmp);
    for i in 0..n {
        rb[i] += tmp[i];
    }
    Ok((rb, grad_a))
}

/// Worst coordinate of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Difference stencil for [`finite_diff_check_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error `O(h^2)`.
    Central,
    /// Five-point central rule, error `O(h^4)`; admits a larger step and so
    /// less cancellation on small derivatives.
    FivePoint,
    /// Five-point estimates at `step / 4^j` for `j = 0..ADAPTIVE_LEVELS`;
    /// keeps the estimate that agrees best with both neighbouring steps,
    /// penalised by the rounding floor. Selection never looks at the
    /// analytic value.
    Adaptive,
}

const ADAPTIVE_LEVELS: usize = 11;

/// Central differences of `f` at `x0` against `analytic`, per coordinate.
/// Relative error uses `max(|analytic|, |numeric|, 1e-12)` as denominator.
pub fn finite_diff_check<F>(f: F, x0: &[f64], analytic: &[f64], step: f64) -> Result<FdReport>
where
    F: FnMut(&[f64]) -> f64,
{
    finite_diff_check_with(f, x0, analytic, step, Stencil::Central)
}

pub fn finite_diff_check_with<F>(mut f: F, x0: &[f64], analytic: &[f64], step: f64, stencil: Stencil) -> Result<FdReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != x0.len() {
        return Err(Error::DimensionMismatch { expected: x0.len(), got: analytic.len() });
    }
    let mut x = x0.to_vec();
    let mut worst = FdReport { max_rel_err: 0.0, coord: 0, analytic: 0.0, numeric: 0.0 };
    let f0 = f(x0);
    let mut eval = |x: &mut Vec<f64>, i: usize, off: f64| {
        x[i] = x0[i] + off;
        let v = f(x);
        x[i] = x0[i];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(Some(i)))
        }
    };
    for i in 0..x0.len() {
        let numeric = match stencil {
            Stencil::Central => (eval(&mut x, i, step)? - eval(&mut x, i, -step)?) / (2.0 * step),
            Stencil::FivePoint => five_point(&mut eval, &mut x, i, step)?,
            Stencil::Adaptive => {
                let mut h = step;
                let mut est = Vec::with_capacity(ADAPTIVE_LEVELS);
                for _ in 0..ADAPTIVE_LEVELS {
                    est.push((h, five_point(&mut eval, &mut x, i, h)?));
                    h /= 4.0;
                }
                // Spread to both neighbours plus the rounding floor eps |f| / h.
                let mut best = (f64::INFINITY, est[1].1);
                for j in 1..ADAPTIVE_LEVELS - 1 {
                    let (hj, d) = est[j];
                    let spread = (d - est[j - 1].1).abs().max((d - est[j + 1].1).abs());
                    let score = spread + 10.0 * f64::EPSILON * f0.abs().max(1.0) / hj;
                    if score < best.0 {
                        best = (score, d);
                    }
                }
                best.1
            }
        };
        let err = relative_error(analytic[i], numeric);
        if err > worst.max_rel_err || i == 0 {
            worst = FdReport { max_rel_err: err, coord: i, analytic: analytic[i], numeric };
        }
    }
    Ok(worst)
}

fn five_point<E>(eval: &mut E, x: &mut Vec<f64>, i: usize, h: f64) -> Result<f64>
where
    E: FnMut(&mut Vec<f64>, usize, f64) -> Result<f64>,
{
    let (p1, m1) = (eval(x, i, h)?, eval(x, i, -h)?);
    let (p2, m2) = (eval(x, i, 2.0 * h)?, eval(x, i, -2.0 * h)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x0 = [0.3, -1.2, 2.0];
        let grad: Vec<f64> = x0.iter().map(|x| 2.0 * x).collect();
        let rep = finite_diff_check(|x| dot(x, x), &x0, &grad, FD_STEP).unwrap();
        assert!(rep.max_rel_err < 1e-9, "{rep:?}");
    }

    #[test]
    fn constant_passes_and_wrong_gradient_is_flagged() {
        let rep = finite_diff_check(|_| 4.0, &[1.0, 2.0], &[0.0, 0.0], FD_STEP).unwrap();
        assert_eq!(rep.max_rel_err, 0.0);
        let x0 = [0.5, 1.5];
        let doubled: Vec<f64> = x0.iter().map(|x| 4.0 * x).collect();
        let rep = finite_diff_check(|x| dot(x, x), &x0, &doubled, FD_STEP).unwrap();
        assert!((rep.max_rel_err - 0.5).abs() < 1e-6, "{rep:?}");
    }

    #[test]
    fn five_point_is_exact_on_quartics() {
        let f = |x: &[f64]| x[0].powi(4) + x[1].powi(3);
        let rep = finite_diff_check_with(f, &[0.7, -0.3], &[4.0 * 0.343, 3.0 * 0.09], 1e-2, Stencil::FivePoint).unwrap();
        assert!(rep.max_rel_err < 1e-12, "{rep:?}");
    }

    #[test]
    fn non_finite_reported() {
        let r = finite_diff_check(|x| if x[1] > 1.0 { f64::NAN } else { 0.0 }, &[0.0, 1.0], &[0.0, 0.0], 0.1);
        assert!(matches!(r, Err(Error::NonFinite(Some(1)))));
    }

    #[test]
    fn identity_system() {
        let a = DMatrix::<f64>::identity(4, 4);
        let x = [1.0, 2.0, 3.0, 4.0];
        let gx = [0.5, -0.5, 0.0, 1.0];
        let g = solve_adjoint(&a, &x, &gx, &Preconditioner::Identity, 1e-12).unwrap();
        assert_eq!(g.grad_b, gx.to_vec());
        assert_eq!(g.grad_a_dense()[(1, 2)], 0.5 * 3.0);
        let (gb, _) = unrolled_pcg_grad(&a, &x, &Preconditioner::Identity, 1, &gx).unwrap();
        for (u, v) in gb.iter().zip(gx) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_upstream_gives_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = solve_adjoint(&a, &[1.0, 1.0], &[0.0, 0.0], &Preconditioner::Identity, 1e-12).unwrap();
        assert!(g.grad_b.iter().all(|v| *v == 0.0));
        let (gb, ga) = unrolled_pcg_grad(&a, &[1.0, 1.0], &Preconditioner::Identity, 2, &[0.0, 0.0]).unwrap();
        assert!(gb.iter().all(|v| *v == 0.0));
        assert!(ga.iter().all(|v| *v == 0.0));
    }
}
