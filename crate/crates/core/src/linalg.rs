//! Matrix plumbing shared across modules: real/complex entries, a compressed
//! sparse Hermitian format for banded samples, and dense eigenvalues.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;

/// Scalar type of a sample: `f64` for β=1, `Complex64` for β=2.
pub trait Entry: ComplexField<RealField = f64> + Copy + Send + Sync + 'static {
    const IS_COMPLEX: bool;
    /// Unit-modulus value e^{iθ}; real entries only support θ ∈ {0, π}.
    fn phase(theta: f64) -> Self;
    fn to_c64(self) -> Complex64;
}

impl Entry for f64 {
    const IS_COMPLEX: bool = false;
    fn phase(theta: f64) -> Self {
        theta.cos().signum()
    }
    fn to_c64(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl Entry for Complex64 {
    const IS_COMPLEX: bool = true;
    fn phase(theta: f64) -> Self {
        Complex64::from_polar(1.0, theta)
    }
    fn to_c64(self) -> Complex64 {
        self
    }
}

/// Linear operator acting on vectors.
pub trait Operator<T: Entry>: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[T], y: &mut [T]);
}

impl<T: Entry> Operator<T> for DMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        let n = self.nrows();
        y.iter_mut().for_each(|v| *v = T::zero());
        for j in 0..n {
            let xj = x[j];
            if xj == T::zero() {
                continue;
            }
            let col = self.column(j);
            for i in 0..n {
                y[i] += col[i] * xj;
            }
        }
    }
}

/// Compressed sparse row storage of a Hermitian matrix (both triangles stored).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHermitian<T> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Entry> SparseHermitian<T> {
    /// Builds from per-row (column, value) lists; columns sorted within each row.
    pub fn from_rows(rows: Vec<Vec<(usize, T)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        SparseHermitian { n, row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

impl<T: Entry> Operator<T> for SparseHermitian<T> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }
}

/// Sorted eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues<T: Entry>(m: &DMatrix<T>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Lift a matrix to complex entries.
pub fn to_complex<T: Entry>(m: &DMatrix<T>) -> DMatrix<Complex64> {
    m.map(|v| v.to_c64())
}

/// Largest entrywise modulus of a − b.
pub fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
