//! Column-major dense building blocks shared by every other module.

use crate::error::{H2Error, Result};
use crate::scalar::Scalar;

/// Column-major dense matrix. Column `j` occupies `data[j * rows..(j + 1) * rows]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// A block of `m` column vectors of length `n`, stored column-major.
///
/// Column `i` is the vector belonging to linear system `i`.
pub type MultiVector<T> = DenseMatrix<T>;

/// Whether the left factor of a product is used as is or conjugate-transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    NoTrans,
    ConjTrans,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(H2Error::Dimension {
                op: "from_col_major",
                expected: format!("{}", rows * cols),
                found: format!("{}", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices; convenient for small literals in tests.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        Self::from_fn(nrows, ncols, |i, j| rows[i][j])
    }

    /// Stacks vectors as columns.
    pub fn from_columns(n: usize, columns: &[Vec<T>]) -> Self {
        let mut m = Self::zeros(n, columns.len());
        for (j, c) in columns.iter().enumerate() {
            m.col_mut(j).copy_from_slice(c);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[T] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Copies columns `range` into a new matrix.
    pub fn columns(&self, range: std::ops::Range<usize>) -> Self {
        let data = self.data[range.start * self.rows..range.end * self.rows].to_vec();
        Self {
            rows: self.rows,
            cols: range.len(),
            data,
        }
    }

    pub fn set_columns(&mut self, start: usize, block: &Self) {
        debug_assert_eq!(block.rows, self.rows);
        let len = block.data.len();
        self.data[start * self.rows..start * self.rows + len].copy_from_slice(&block.data);
    }

    /// Reshapes to `rows x cols` with all entries zero, keeping the allocation.
    pub fn reset(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.clear();
        self.data.resize(rows * cols, T::zero());
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(T::zero());
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs2()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest elementwise `|a - b|`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    /// `self * other` as a new matrix.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let mut c = Self::zeros(self.rows, other.cols);
        gemm_update(&mut c, self, other, T::one(), Op::NoTrans)?;
        Ok(c)
    }

    /// `y = self * x` for a single vector.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![T::zero(); self.rows];
        for (j, &xj) in x.iter().enumerate() {
            axpy(xj, self.col(j), &mut y);
        }
        y
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

/// `C <- C + alpha * op(A) * B`.
///
/// Each column of `C` is produced by the same sequence of operations no matter how
/// many columns `B` has, so a blocked product is bitwise identical to the
/// corresponding single-column products.
pub fn gemm_update<T: Scalar>(
    c: &mut DenseMatrix<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    alpha: T,
    op: Op,
) -> Result<()> {
    let (m, k) = match op {
        Op::NoTrans => (a.rows, a.cols),
        Op::ConjTrans => (a.cols, a.rows),
    };
    if k != b.rows || m != c.rows || b.cols != c.cols {
        return Err(H2Error::Dimension {
            op: "gemm_update",
            expected: format!("{}x{} * {}x{} -> {}x{}", m, k, k, c.cols, m, c.cols),
            found: format!("{}x{} * {}x{} -> {}x{}", m, k, b.rows, b.cols, c.rows, c.cols),
        });
    }
    if alpha == T::zero() {
        return Ok(());
    }
    match op {
        Op::NoTrans => {
            for j in 0..b.cols {
                let bj = b.col(j);
                let cj = &mut c.data[j * m..(j + 1) * m];
                for (p, &bpj) in bj.iter().enumerate() {
                    let s = alpha * bpj;
                    if s == T::zero() {
                        continue;
                    }
                    axpy(s, a.col(p), cj);
                }
            }
        }
        Op::ConjTrans => {
            for j in 0..b.cols {
                let bj = b.col(j);
                for i in 0..m {
                    let d = dot(a.col(i), bj);
                    c.data[i + j * m] += alpha * d;
                }
            }
        }
    }
    Ok(())
}

/// `y <- y + alpha * x`.
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Euclidean inner product `<x, y> = sum conj(x_i) * y_i`.
#[inline]
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        acc += a.conj() * b;
    }
    acc
}

#[inline]
pub fn norm2<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.abs2()).sum::<f64>().sqrt()
}

/// Plane rotation `[c s; -conj(s) c]` with real `c`, mapping `(a, b)` to `(r, 0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GivensRotation<T> {
    pub c: f64,
    pub s: T,
    pub r: T,
}

impl<T: Scalar> GivensRotation<T> {
    pub fn identity() -> Self {
        Self {
            c: 1.0,
            s: T::zero(),
            r: T::zero(),
        }
    }

    /// Applies the rotation to the pair `(x, y)` in place.
    #[inline]
    pub fn apply(&self, x: &mut T, y: &mut T) {
        let (a, b) = (*x, *y);
        *x = a.scale(self.c) + self.s * b;
        *y = b.scale(self.c) - self.s.conj() * a;
    }
}

/// LAPACK-style rotation: `c = |a| / rho`, `s = sign(a) conj(b) / rho`, `r = sign(a) rho`.
pub fn make_givens<T: Scalar>(a: T, b: T) -> GivensRotation<T> {
    let abs_b = b.abs();
    if abs_b == 0.0 {
        return GivensRotation {
            c: 1.0,
            s: T::zero(),
            r: a,
        };
    }
    let abs_a = a.abs();
    if abs_a == 0.0 {
        return GivensRotation {
            c: 0.0,
            s: b.conj().scale(1.0 / abs_b),
            r: T::from_real(abs_b),
        };
    }
    let rho = abs_a.hypot(abs_b);
    let phase = a.scale(1.0 / abs_a);
    GivensRotation {
        c: abs_a / rho,
        s: phase * b.conj().scale(1.0 / rho),
        r: phase.scale(rho),
    }
}

/// Backward substitution for the leading `k x k` upper triangle of `r`.
pub fn upper_tri_solve<T: Scalar>(r: &DenseMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    let k = b.len();
    if r.rows < k || r.cols < k {
        return Err(H2Error::Dimension {
            op: "upper_tri_solve",
            expected: format!("at least {k}x{k}"),
            found: format!("{}x{}", r.rows, r.cols),
        });
    }
    let mut y = b.to_vec();
    for i in (0..k).rev() {
        let d = r[(i, i)];
        if d.abs() < 1e-300 {
            return Err(H2Error::SingularTriangular { index: i });
        }
        let mut acc = y[i];
        for j in i + 1..k {
            acc -= r[(i, j)] * y[j];
        }
        y[i] = acc / d;
    }
    Ok(y)
}
