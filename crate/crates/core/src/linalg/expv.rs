//! Action of the heat semigroup e^{-tA} for symmetric positive
//! semi-definite A with bounded diagonal.
//!
//! Default engine: uniformization. With sigma >= max_i A_ii the matrix
//! P = I - A/sigma has non-negative entries and spectrum in [-1, 1], so
//!
//! ```text
//! e^{-tA} v = e^{-a} sum_k  a^k / k!  P^k v,    a = sigma t,
//! ```
//!
//! and truncating the Poisson sum after cumulative weight 1 - eps leaves a
//! 2-norm error <= eps ||v||. Large a is handled by splitting t into chunks
//! (each propagator is a 2-norm contraction, so chunk errors add). For big
//! chunks a Lanczos (Krylov) evaluation with an a-posteriori error estimate
//! is tried first; on failure the chunk falls back to uniformization.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{axpy, dot, norm2, SymOp};
use crate::{Error, Result};

/// Largest Poisson parameter handled by a single uniformization pass;
/// e^{-700} is still representable in f64.
const UNIF_MAX_A: f64 = 500.0;

/// Chunk size (in units of sigma * t) above which the Krylov route is tried.
const KRYLOV_CHUNK_A: f64 = 2500.0;

/// Krylov subspace cap per chunk.
const KRYLOV_M_MAX: usize = 120;

/// Reusable heat-action driver for one operator.
pub struct HeatAction<'a> {
    op: &'a dyn SymOp,
    sigma: f64,
}

impl<'a> HeatAction<'a> {
    /// `sigma` must dominate the diagonal of A. Taken from the operator's
    /// diagonal; operators without one are rejected.
    pub fn new(op: &'a dyn SymOp) -> Result<Self> {
        let diag = op
            .diag()
            .ok_or_else(|| Error::invalid("heat action needs the operator diagonal"))?;
        let sigma = diag.iter().cloned().fold(0.0, f64::max);
        Ok(HeatAction { op, sigma })
    }

    /// Caller-supplied diagonal bound (skips the diagonal query).
    pub fn with_sigma(op: &'a dyn SymOp, sigma: f64) -> Self {
        HeatAction { op, sigma }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// u = e^{-tA} v with 2-norm error <= tol * ||v||_2 (at entry).
    pub fn apply(&self, t: f64, v: &[f64], tol: f64) -> Result<Vec<f64>> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::invalid(format!("heat action needs t >= 0, got {t}")));
        }
        if tol <= 0.0 {
            return Err(Error::invalid(format!("heat action needs tol > 0, got {tol}")));
        }
        if v.len() != self.op.dim() {
            return Err(Error::invalid("heat action: field length mismatch"));
        }
        let vnorm = norm2(v);
        if t == 0.0 || self.sigma == 0.0 || vnorm == 0.0 {
            return Ok(v.to_vec());
        }
        let abs_budget = tol * vnorm;

        let a_total = self.sigma * t;
        if a_total <= UNIF_MAX_A {
            return Ok(self.uniformize(t, v, abs_budget));
        }

        let chunks = (a_total / KRYLOV_CHUNK_A).ceil() as usize;
        let chunks = chunks.max(1);
        let dt = t / chunks as f64;
        let chunk_budget = abs_budget / chunks as f64;
        let mut cur = v.to_vec();
        for _ in 0..chunks {
            cur = match self.krylov_chunk(dt, &cur, chunk_budget) {
                Ok(next) => next,
                Err(_) => self.uniform_chunked(dt, &cur, chunk_budget),
            };
        }
        Ok(cur)
    }

    /// Single-pass uniformization; requires sigma * t <= ~700.
    fn uniformize(&self, t: f64, v: &[f64], abs_budget: f64) -> Vec<f64> {
        let n = v.len();
        let a = self.sigma * t;
        let tail_eps = (abs_budget / norm2(v).max(f64::MIN_POSITIVE)).min(0.5);

        let mut p = v.to_vec();
        let mut next = vec![0.0; n];
        let mut acc = vec![0.0; n];
        let mut w = (-a).exp();
        let mut cum = w;
        axpy(w, &p, &mut acc);

        // Cap at the sub-Gaussian Poisson tail: 14 deviations past the mean
        // leaves mass far below any representable tolerance.
        let k_max = (a + 14.0 * (a + 40.0).sqrt() + 80.0) as usize;
        let mut k = 0usize;
        while 1.0 - cum > tail_eps && k < k_max {
            k += 1;
            // next = P p = p - A p / sigma.
            self.op.apply(&p, &mut next);
            for i in 0..n {
                next[i] = p[i] - next[i] / self.sigma;
            }
            std::mem::swap(&mut p, &mut next);
            w *= a / k as f64;
            cum += w;
            axpy(w, &p, &mut acc);
        }
        acc
    }

    /// Uniformization of one time chunk, splitting as needed to keep the
    /// per-pass Poisson parameter under UNIF_MAX_A.
    fn uniform_chunked(&self, t: f64, v: &[f64], abs_budget: f64) -> Vec<f64> {
        let pieces = ((self.sigma * t) / UNIF_MAX_A).ceil().max(1.0) as usize;
        let dt = t / pieces as f64;
        let piece_budget = abs_budget / pieces as f64;
        let mut cur = v.to_vec();
        for _ in 0..pieces {
            cur = self.uniformize(dt, &cur, piece_budget);
        }
        cur
    }

    /// Lanczos evaluation of e^{-tA} v (no reorthogonalization: the
    /// three-term basis is enough for smooth functions of A). The error
    /// representation err = beta_{j+1} int_0^t e^{-(t-s)A} v_{j+1}
    /// [e^{-sT}]_{j,1} ds is bounded through the eigendecomposition of T
    /// (each propagator has norm <= 1), and acceptance demands the bound
    /// under budget twice in a row.
    fn krylov_chunk(&self, t: f64, v: &[f64], abs_budget: f64) -> Result<Vec<f64>> {
        let n = v.len();
        let beta0 = norm2(v);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();

        let mut vq = v.to_vec();
        vq.iter_mut().for_each(|x| *x /= beta0);
        basis.push(vq);
        let mut w = vec![0.0; n];
        let mut good_streak = 0usize;

        for j in 0..KRYLOV_M_MAX.min(n) {
            self.op.apply(&basis[j], &mut w);
            if j > 0 {
                let b = betas[j - 1];
                let prev = &basis[j - 1];
                for i in 0..n {
                    w[i] -= b * prev[i];
                }
            }
            let alpha = dot(&w, &basis[j]);
            alphas.push(alpha);
            {
                let q = &basis[j];
                for i in 0..n {
                    w[i] -= alpha * q[i];
                }
            }
            let beta = norm2(&w);

            let (exp_col, tail_factor) = expm_tridiag_col0(&alphas, &betas, t);
            let est = beta0 * beta * tail_factor;
            let breakdown = beta <= 1e-12 * alphas[0].abs().max(1.0);
            if est <= abs_budget {
                good_streak += 1;
            } else {
                good_streak = 0;
            }
            if (good_streak >= 2 && j >= 3) || breakdown || j + 1 == KRYLOV_M_MAX.min(n) {
                if good_streak < 2 && !breakdown {
                    return Err(Error::NoConvergence(format!(
                        "krylov heat chunk: estimate {est:.3e} > budget {abs_budget:.3e} at m = {}",
                        j + 1
                    )));
                }
                let mut out = vec![0.0; n];
                for (row, q) in basis.iter().enumerate() {
                    axpy(beta0 * exp_col[row], q, &mut out);
                }
                return Ok(out);
            }
            betas.push(beta);
            let mut q = w.clone();
            q.iter_mut().for_each(|x| *x /= beta);
            basis.push(q);
        }
        unreachable!("krylov loop exits inside the body");
    }
}

/// First column of e^{-t T} for symmetric tridiagonal T, together with the
/// truncation bound sum_k |Q_{0k} Q_{jk}| min(t, 1/lambda_k) that controls
/// the Krylov error integral.
fn expm_tridiag_col0(alphas: &[f64], betas: &[f64], t: f64) -> (Vec<f64>, f64) {
    let j = alphas.len();
    let mut m = DMatrix::<f64>::zeros(j, j);
    for i in 0..j {
        m[(i, i)] = alphas[i];
        if i + 1 < j {
            m[(i, i + 1)] = betas[i];
            m[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut col = vec![0.0; j];
    let mut tail = 0.0;
    for k in 0..j {
        let lam = eig.eigenvalues[k];
        let q0 = eig.eigenvectors[(0, k)];
        let qj = eig.eigenvectors[(j - 1, k)];
        let coeff = (-t * lam).exp() * q0;
        for i in 0..j {
            col[i] += coeff * eig.eigenvectors[(i, k)];
        }
        let window = if lam > 0.0 { t.min(1.0 / lam) } else { t };
        tail += (q0 * qj).abs() * window;
    }
    (col, tail)
}

/// Convenience wrapper: one-shot e^{-tA} v.
pub fn expv_symmetric(op: &dyn SymOp, t: f64, v: &[f64], tol: f64) -> Result<Vec<f64>> {
    HeatAction::new(op)?.apply(t, v, tol)
}
