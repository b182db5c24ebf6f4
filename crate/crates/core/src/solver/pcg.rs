use serde::{Deserialize, Serialize};

use super::{dot, norm, LinearOperator, Preconditioner};
use crate::clock::Stopwatch;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Tolerance {
    /// Stop when `||r|| <= tol * ||b||`.
    Relative(f64),
    /// Stop when `||r|| <= tol`.
    Absolute(f64),
}

impl Tolerance {
    fn threshold(&self, b_norm: f64) -> f64 {
        match *self {
            Tolerance::Relative(t) => t * b_norm,
            Tolerance::Absolute(t) => t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcgOptions {
    pub max_iters: usize,
    pub tol: Tolerance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `||b - A x_k||` for `k = 0..=iterations` (recurrence residual).
    pub residual_history: Vec<f64>,
    pub b_norm: f64,
    pub converged: bool,
    pub wall_time: f64,
    pub precond_setup_time: f64,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&0.0)
    }

    pub fn relative_history(&self) -> Vec<f64> {
        let s = if self.b_norm > 0.0 { self.b_norm } else { 1.0 };
        self.residual_history.iter().map(|r| r / s).collect()
    }
}

/// PCG from `x0 = 0` with relative-residual stopping.
pub fn pcg_solve<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    m: &Preconditioner,
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, SolveReport)> {
    pcg_solve_with(
        a,
        b,
        m,
        &PcgOptions {
            max_iters,
            tol: Tolerance::Relative(tol),
        },
    )
}

pub fn pcg_solve_with<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    m: &Preconditioner,
    opts: &PcgOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    if let Some(md) = m.dim() {
        if md != n {
            return Err(Error::DimensionMismatch { expected: n, got: md });
        }
    }
    let clock = Stopwatch::start();
    let b_norm = norm(b);
    let threshold = opts.tol.threshold(b_norm);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut history = vec![b_norm];
    let mut converged = b_norm <= threshold;
    let mut iterations = 0;
    if !converged {
        m.apply(&r, &mut z);
        let mut p = z.clone();
        let mut rho = dot(&r, &z);
        for k in 0..opts.max_iters {
            a.apply(&p, &mut q);
            let curvature = dot(&p, &q);
            if !(curvature > 0.0) {
                return Err(Error::Breakdown { iteration: k, curvature });
            }
            let alpha = rho / curvature;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            iterations = k + 1;
            let res = norm(&r);
            history.push(res);
            if res <= threshold {
                converged = true;
                break;
            }
            m.apply(&r, &mut z);
            let rho_next = dot(&r, &z);
            let beta = rho_next / rho;
            rho = rho_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
    Ok((
        x,
        SolveReport {
            iterations,
            residual_history: history,
            b_norm,
            converged,
            wall_time: clock.seconds(),
            precond_setup_time: 0.0,
        },
    ))
}
