//! Preconditioned conjugate gradients for `(diag(d) + K) x = b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DiffusionOperator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    /// Relative residual `‖b − Ax‖₂ / ‖b‖₂` at which iteration stops.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Iteration cap; 0 means `2·n + 100`.
    #[serde(default)]
    pub max_iterations: usize,
}

fn default_tolerance() -> f64 {
    1e-12
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: default_tolerance(),
            max_iterations: 0,
        }
    }
}

impl SolverOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `(diag(shift) + K) x = rhs` with Jacobi-preconditioned CG.
///
/// `x` holds the initial guess on entry. `shift` must be strictly positive so
/// the system is symmetric positive definite.
pub fn solve_shifted(
    op: &DiffusionOperator,
    shift: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    opts: &SolverOptions,
    context: impl FnOnce() -> String,
) -> Result<SolveStats> {
    let n = rhs.len();
    let bnorm = dot(rhs, rhs).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let max_iter = if opts.max_iterations == 0 { 2 * n + 100 } else { opts.max_iterations };
    let inv_diag: Vec<f64> = shift
        .iter()
        .zip(op.stiffness_diagonal())
        .map(|(s, k)| 1.0 / (s + k))
        .collect();

    let apply = |v: &[f64], out: &mut [f64]| {
        for ((o, s), vi) in out.iter_mut().zip(shift).zip(v) {
            *o = s * vi;
        }
        op.add_stiffness(v, out);
    };

    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri = bi - *ri;
    }
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    if rel <= opts.tolerance {
        return Ok(SolveStats { iterations: 0, residual: rel });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);

    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= opts.tolerance {
            return Ok(SolveStats { iterations: it, residual: rel });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver {
        context: context(),
        iterations: max_iter,
        residual: rel,
    })
}
