//! Dense oracles: exact (to rounding) spectral computations for small
//! operators, used to validate the sparse iterative paths.

use nalgebra::{DMatrix, SymmetricEigen};

use super::SymOp;

/// Cap beyond which materializing the operator is considered a bug.
pub const DENSE_LIMIT: usize = 2000;

/// Materialize the operator column by column.
pub fn materialize(op: &dyn SymOp) -> DMatrix<f64> {
    let n = op.dim();
    assert!(n <= DENSE_LIMIT, "dense oracle limited to {DENSE_LIMIT} vertices, got {n}");
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for jcol in 0..n {
        e[jcol] = 1.0;
        op.apply(&e, &mut col);
        e[jcol] = 0.0;
        for i in 0..n {
            m[(i, jcol)] = col[i];
        }
    }
    m
}

/// All eigenvalues, ascending.
pub fn dense_eigenvalues(op: &dyn SymOp) -> Vec<f64> {
    let eig = SymmetricEigen::new(materialize(op));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals
}

/// Smallest eigenvalue.
pub fn dense_smallest_eigenvalue(op: &dyn SymOp) -> f64 {
    dense_eigenvalues(op)[0]
}

/// e^{-tA} v through the full eigendecomposition.
pub fn dense_expv(op: &dyn SymOp, t: f64, v: &[f64]) -> Vec<f64> {
    let n = op.dim();
    let eig = SymmetricEigen::new(materialize(op));
    let mut out = vec![0.0; n];
    for k in 0..n {
        let mut proj = 0.0;
        for i in 0..n {
            proj += eig.eigenvectors[(i, k)] * v[i];
        }
        let coeff = proj * (-t * eig.eigenvalues[k]).exp();
        for i in 0..n {
            out[i] += coeff * eig.eigenvectors[(i, k)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::csr::{CsrMatrix, DiagMinusCsr};

    #[test]
    fn dense_path_eigenvalues_are_classical() {
        let n = 9;
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
        let op = DiagMinusCsr { diag: vec![2.0; n], couplings: CsrMatrix::from_rows(&rows) };
        let vals = dense_eigenvalues(&op);
        for (j, v) in vals.iter().enumerate() {
            let exact =
                2.0 - 2.0 * (std::f64::consts::PI * (j as f64 + 1.0) / (n as f64 + 1.0)).cos();
            assert!((v - exact).abs() < 1e-12);
        }
    }
}
