//! Dense aliases and a small compressed-sparse-row matrix for full Hilbert space operators.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type StateVector = DVector<C64>;
pub type DensityMatrix = DMatrix<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Largest entry of |M - M^dagger|.
pub fn hermiticity_error(m: &ComplexMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().fold(0.0, |a, z| a.max(z.norm()))
}

/// Basis vector e_k of dimension `dim`.
pub fn basis_state(dim: usize, k: usize) -> StateVector {
    let mut v = StateVector::zeros(dim);
    v[k] = C64::new(1.0, 0.0);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub dim: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<C64>,
}

impl CsrMatrix {
    /// Build from per-row `(column, value)` lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, C64)>>) -> Self {
        let dim = rows.len();
        let mut indptr = Vec::with_capacity(dim + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (col, v) in row {
                if last == Some(col) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(col);
                    values.push(v);
                    last = Some(col);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix { dim, indptr, indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let span = self.indptr[row]..self.indptr[row + 1];
        match self.indices[span.clone()].binary_search(&col) {
            Ok(k) => self.values[span.start + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    /// y = A x
    pub fn matvec_into(&self, x: &[C64], y: &mut [C64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.dim) {
            let (a, b) = (self.indptr[r], self.indptr[r + 1]);
            *out = self.values[a..b].iter().zip(&self.indices[a..b]).map(|(v, &c)| v * x[c]).sum();
        }
    }

    pub fn matvec(&self, x: &StateVector) -> StateVector {
        let mut y = StateVector::zeros(self.dim);
        self.matvec_into(x.as_slice(), y.as_mut_slice());
        y
    }

    /// A * M for a dense column-major M.
    pub fn mul_dense(&self, m: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim, m.ncols());
        for j in 0..m.ncols() {
            let col = m.column(j);
            let src = col.as_slice();
            let mut dst = out.column_mut(j);
            for r in 0..self.dim {
                let mut acc = C64::new(0.0, 0.0);
                for k in self.indptr[r]..self.indptr[r + 1] {
                    acc += self.values[k] * src[self.indices[k]];
                }
                dst[r] = acc;
            }
        }
        out
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for k in self.indptr[r]..self.indptr[r + 1] {
                m[(r, self.indices[k])] += self.values[k];
            }
        }
        m
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let col = self.indices[k];
                worst = worst.max((self.values[k] - self.get(col, r).conj()).norm());
            }
        }
        worst
    }

    /// Gershgorin bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        (0..self.dim)
            .map(|r| (self.indptr[r]..self.indptr[r + 1]).map(|k| self.values[k].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, z| a.max(z.norm()))
    }
}
