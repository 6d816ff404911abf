//! Preconditioned conjugate gradients for SPD systems.

use super::{axpy, dot, norm2, SymOp};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solve A x = b for symmetric positive definite A, to a relative residual
/// ||b - A x|| <= rel_tol * ||b||. Jacobi preconditioning when the operator
/// exposes its diagonal. Returns the solution and iteration stats.
pub fn cg_solve(op: &dyn SymOp, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgStats)> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::invalid("cg: rhs length mismatch"));
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], CgStats { iterations: 0, relative_residual: 0.0 }));
    }
    let inv_diag: Option<Vec<f64>> = op.diag().map(|d| {
        d.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 }).collect()
    });

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = r.clone();
    if let Some(ref idg) = inv_diag {
        for i in 0..n {
            z[i] = r[i] * idg[i];
        }
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut iterations = 0;
    let mut relres = 1.0;
    while iterations < max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NoConvergence(format!(
                "cg: operator not positive definite (p'Ap = {pap})"
            )));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        iterations += 1;

        relres = norm2(&r) / bnorm;
        if relres <= rel_tol {
            break;
        }
        if let Some(ref idg) = inv_diag {
            for i in 0..n {
                z[i] = r[i] * idg[i];
            }
        } else {
            z.copy_from_slice(&r);
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if relres > rel_tol {
        return Err(Error::NoConvergence(format!(
            "cg: residual {relres:.3e} > {rel_tol:.3e} after {iterations} iterations"
        )));
    }
    Ok((x, CgStats { iterations, relative_residual: relres }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::csr::{CsrMatrix, DiagMinusCsr};

    fn path_laplacian(n: usize) -> DiagMinusCsr {
        // Dirichlet Laplacian of a path with absorbing endpoints.
        let rows: Vec<Vec<(u32, f64)>> = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                if i > 0 {
                    r.push((i as u32 - 1, 1.0));
                }
                if i + 1 < n {
                    r.push((i as u32 + 1, 1.0));
                }
                r
            })
            .collect();
        DiagMinusCsr { diag: vec![2.0; n], couplings: CsrMatrix::from_rows(&rows) }
    }

    #[test]
    fn solves_dirichlet_path_exactly() {
        // A u = 1 on a path of n interior vertices has the parabolic profile
        // u_i = (i+1)(n-i)/2.
        let n = 31;
        let op = path_laplacian(n);
        let (u, stats) = cg_solve(&op, &vec![1.0; n], 1e-12, 10_000).unwrap();
        for i in 0..n {
            let exact = 0.5 * (i as f64 + 1.0) * (n as f64 - i as f64);
            assert!((u[i] - exact).abs() < 1e-8, "u[{i}] = {} vs {exact}", u[i]);
        }
        assert!(stats.relative_residual <= 1e-12);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let op = path_laplacian(5);
        let (u, stats) = cg_solve(&op, &vec![0.0; 5], 1e-12, 100).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
        assert_eq!(stats.iterations, 0);
    }
}
