//! Compressed sparse row storage for symmetric graph operators.

use super::SymOp;

/// CSR matrix. Rows are stored contiguously; the struct does not assume
/// symmetry, but every operator built by this crate stores both triangles.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row (column, value) entry lists.
    pub fn from_rows(rows: &[Vec<(u32, f64)>]) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0usize);
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for row in rows {
            for &(c, v) in row {
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n, row_ptr, col_idx, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// y = A x.
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k] as usize];
            }
            y[i] = acc;
        }
    }

    /// Row iterator: (column, value) pairs of row i.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.vals[k]))
    }
}

/// CSR plus an explicit diagonal: A = diag(d) - C, the killed graph
/// Laplacian shape. `C` holds off-diagonal couplings (positive), `d` the
/// full row sums of the ambient graph, so absorbing boundaries are encoded
/// by d exceeding the row sum of C.
#[derive(Debug, Clone)]
pub struct DiagMinusCsr {
    pub diag: Vec<f64>,
    pub couplings: CsrMatrix,
}

impl SymOp for DiagMinusCsr {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.couplings.spmv(x, y);
        for i in 0..self.diag.len() {
            y[i] = self.diag[i] * x[i] - y[i];
        }
    }

    fn diag(&self) -> Option<Vec<f64>> {
        Some(self.diag.clone())
    }
}
