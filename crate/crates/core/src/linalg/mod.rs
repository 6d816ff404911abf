//! Sparse symmetric linear algebra: CSR storage, preconditioned CG,
//! Lanczos eigensolvers, and the action of the heat semigroup.
//!
//! Everything operates through [`SymOp`], the minimal interface for a
//! symmetric positive semi-definite operator. Dense routines (used as
//! oracles for graphs below 2000 vertices, and for the small tridiagonal
//! problems inside Lanczos) live in [`dense`].

pub mod cg;
pub mod csr;
pub mod dense;
pub mod expv;
pub mod lanczos;

pub use cg::{cg_solve, CgStats};
pub use csr::CsrMatrix;
pub use expv::{expv_symmetric, HeatAction};
pub use lanczos::{lanczos_largest, smallest_eigenpairs};

/// Symmetric linear operator on R^n.
pub trait SymOp {
    fn dim(&self) -> usize;

    /// y = A x.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Diagonal of A, when cheaply available (enables Jacobi preconditioning).
    fn diag(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Dot product. Plain sequential sum: deterministic across thread counts.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
