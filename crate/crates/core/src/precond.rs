//! Preconditioners: drop-tolerance incomplete Cholesky / LU on the densified
//! operator, and block Jacobi assembled from the diagonal nearfield blocks.
//!
//! All kinds apply their inverse to a block of right-hand sides. The columns are
//! split into `ceil(m / threads)`-sized chunks that are solved concurrently; inside
//! a chunk the triangular solves sweep over all of its columns at once.

use std::time::Instant;

use rayon::prelude::*;

use crate::block_tree::BlockKind;
use crate::dense::{DenseMatrix, MultiVector};
use crate::error::{check_dim, H2Error, Result};
use crate::h2matrix::H2Matrix;
use crate::parallel;
use crate::scalar::Scalar;

const MAX_BOOSTS: usize = 3;
const PIVOT_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorKind {
    Cholesky,
    Lu,
}

impl FactorKind {
    pub fn name(self) -> &'static str {
        match self {
            FactorKind::Cholesky => "ic",
            FactorKind::Lu => "ilu",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorStats {
    pub kind: &'static str,
    pub tau: f64,
    pub nnz_kept: usize,
    pub nnz_dropped_fraction: f64,
    pub boosts: usize,
    pub factor_time: f64,
}

/// Triangular factor in compressed rows, diagonal kept apart.
#[derive(Clone, Debug)]
struct Triangle<T> {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<T>,
    diag: Vec<T>,
}

impl<T: Scalar> Triangle<T> {
    fn from_rows(rows: Vec<Vec<(usize, T)>>, diag: Vec<T>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let (mut cols, mut values) = (Vec::new(), Vec::new());
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                cols.push(j);
                values.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self { row_ptr, cols, values, diag }
    }

    fn nnz(&self) -> usize {
        self.values.len() + self.diag.len()
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    fn to_dense(&self) -> DenseMatrix<T> {
        let n = self.diag.len();
        let mut d = DenseMatrix::zeros(n, n);
        for i in 0..n {
            d[(i, i)] = self.diag[i];
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// Forward substitution on a row-major `n x c` block.
    fn solve_lower(&self, buf: &mut [T], c: usize) {
        for i in 0..self.diag.len() {
            let (before, rest) = buf.split_at_mut(i * c);
            let xi = &mut rest[..c];
            for (j, v) in self.row(i) {
                for (a, &b) in xi.iter_mut().zip(&before[j * c..(j + 1) * c]) {
                    *a -= v * b;
                }
            }
            let d = self.diag[i];
            xi.iter_mut().for_each(|a| *a = *a / d);
        }
    }

    /// Backward substitution on a row-major `n x c` block.
    fn solve_upper(&self, buf: &mut [T], c: usize) {
        for i in (0..self.diag.len()).rev() {
            let (head, tail) = buf.split_at_mut((i + 1) * c);
            let xi = &mut head[i * c..];
            for (j, v) in self.row(i) {
                let off = (j - i - 1) * c;
                for (a, &b) in xi.iter_mut().zip(&tail[off..off + c]) {
                    *a -= v * b;
                }
            }
            let d = self.diag[i];
            xi.iter_mut().for_each(|a| *a = *a / d);
        }
    }
}

/// Incomplete triangular factorization `A ~ L U` (`U = L^*` for Cholesky).
#[derive(Clone, Debug)]
pub struct Factorization<T> {
    kind: FactorKind,
    lower: Triangle<T>,
    upper: Triangle<T>,
    stats: FactorStats,
}

impl<T: Scalar> Factorization<T> {
    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.lower.diag.len()
    }

    pub fn stats(&self) -> &FactorStats {
        &self.stats
    }

    pub fn lower(&self) -> DenseMatrix<T> {
        self.lower.to_dense()
    }

    pub fn upper(&self) -> DenseMatrix<T> {
        self.upper.to_dense()
    }

    fn solve_rows(&self, buf: &mut [T], c: usize) {
        self.lower.solve_lower(buf, c);
        self.upper.solve_upper(buf, c);
    }
}

struct Outcome<T> {
    lower: Vec<Vec<(usize, T)>>,
    lower_diag: Vec<T>,
    upper: Vec<Vec<(usize, T)>>,
    upper_diag: Vec<T>,
    kept: usize,
    dropped: usize,
}

/// Right-looking elimination with dropping. Only the lower triangle of `a` is
/// referenced for Cholesky. Returns the failing pivot on breakdown.
fn eliminate<T: Scalar>(mut a: DenseMatrix<T>, kind: FactorKind, tau: f64) -> std::result::Result<Outcome<T>, usize> {
    let n = a.rows();
    let scale: Vec<f64> = (0..n).map(|i| a[(i, i)].abs().sqrt()).collect();
    let mut out = Outcome {
        lower: vec![Vec::new(); n],
        lower_diag: vec![T::one(); n],
        upper: vec![Vec::new(); n],
        upper_diag: vec![T::zero(); n],
        kept: 0,
        dropped: 0,
    };
    let keep = |v: T, i: usize, j: usize, out: &mut Outcome<T>| {
        if v == T::zero() {
            return false;
        }
        if v.abs() < tau * scale[i] * scale[j] {
            out.dropped += 1;
            false
        } else {
            out.kept += 1;
            true
        }
    };
    for k in 0..n {
        let pivot = a[(k, k)];
        let bad = match kind {
            FactorKind::Cholesky => !(pivot.re() > PIVOT_FLOOR) || !pivot.is_finite(),
            FactorKind::Lu => !(pivot.abs() > PIVOT_FLOOR) || !pivot.is_finite(),
        };
        if bad {
            return Err(k);
        }
        // column k of L (rows below k) and row k of U (columns right of k)
        let mut col: Vec<(usize, T)> = Vec::new();
        let mut row: Vec<(usize, T)> = Vec::new();
        match kind {
            FactorKind::Cholesky => {
                let d = T::from_real(pivot.re().sqrt());
                out.lower_diag[k] = d;
                out.upper_diag[k] = d;
                for i in k + 1..n {
                    let v = a[(i, k)];
                    if keep(v, i, k, &mut out) {
                        col.push((i, v / d));
                    }
                }
                for &(i, l) in &col {
                    out.lower[i].push((k, l));
                    out.upper[k].push((i, l.conj()));
                }
                for (p, &(j, lj)) in col.iter().enumerate() {
                    for &(i, li) in &col[p..] {
                        a[(i, j)] -= li * lj.conj();
                    }
                }
            }
            FactorKind::Lu => {
                out.upper_diag[k] = pivot;
                for i in k + 1..n {
                    let v = a[(i, k)];
                    if keep(v, i, k, &mut out) {
                        col.push((i, v / pivot));
                    }
                    let w = a[(k, i)];
                    if keep(w, k, i, &mut out) {
                        row.push((i, w));
                    }
                }
                for &(i, l) in &col {
                    out.lower[i].push((k, l));
                }
                out.upper[k] = row.clone();
                for &(j, u) in &row {
                    for &(i, l) in &col {
                        a[(i, j)] -= l * u;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn factor<T: Scalar>(a: &DenseMatrix<T>, tau: f64, kind: FactorKind) -> Result<Factorization<T>> {
    check_dim("factorization: square", a.rows(), a.cols())?;
    if a.rows() == 0 {
        return Err(H2Error::EmptyInput("factorization input"));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(H2Error::InvalidParameter(format!("drop tolerance must be >= 0, got {tau}")));
    }
    let start = Instant::now();
    let n = a.rows();
    let trace: f64 = (0..n).map(|i| a[(i, i)].abs()).sum::<f64>() / n as f64;
    let mut last_pivot = 0;
    for boosts in 0..=MAX_BOOSTS {
        let mut work = a.clone();
        if boosts > 0 {
            let delta = 1e-8 * trace * 1e4f64.powi(boosts as i32 - 1);
            log::warn!("{} pivot {last_pivot} failed, boosting diagonal by {delta:e}", kind.name());
            for i in 0..n {
                work[(i, i)] += T::from_real(delta);
            }
        }
        match eliminate(work, kind, tau) {
            Ok(out) => {
                let lower = Triangle::from_rows(out.lower, out.lower_diag);
                let upper = Triangle::from_rows(out.upper, out.upper_diag);
                let nnz_kept = match kind {
                    FactorKind::Cholesky => lower.nnz(),
                    FactorKind::Lu => lower.values.len() + upper.nnz(),
                };
                let considered = out.kept + out.dropped;
                let stats = FactorStats {
                    kind: kind.name(),
                    tau,
                    nnz_kept,
                    nnz_dropped_fraction: if considered == 0 { 0.0 } else { out.dropped as f64 / considered as f64 },
                    boosts,
                    factor_time: start.elapsed().as_secs_f64(),
                };
                return Ok(Factorization { kind, lower, upper, stats });
            }
            Err(k) => last_pivot = k,
        }
    }
    Err(H2Error::FactorizationFailed { pivot: last_pivot, boosts: MAX_BOOSTS })
}

/// Incomplete Cholesky `A ~ L L^*` of a Hermitian positive definite matrix.
///
/// An eliminated entry `a_ij` is dropped when `|a_ij| < tau sqrt(|a_ii| |a_jj|)`;
/// `tau = 0` is the exact factorization. Nonpositive pivots trigger up to three
/// retries on `A + delta I` with growing `delta`.
pub fn ic_drop_factor<T: Scalar>(a: &DenseMatrix<T>, tau: f64) -> Result<Factorization<T>> {
    factor(a, tau, FactorKind::Cholesky)
}

/// Incomplete LU `A ~ L U` without pivoting, unit lower `L`. Same drop rule and
/// boost policy as [`ic_drop_factor`].
pub fn ilu_drop_factor<T: Scalar>(a: &DenseMatrix<T>, tau: f64) -> Result<Factorization<T>> {
    factor(a, tau, FactorKind::Lu)
}

/// Dense LU factors of one diagonal nearfield block.
#[derive(Clone, Debug)]
struct DiagonalBlock<T> {
    label: Vec<usize>,
    lu: DenseMatrix<T>,
}

impl<T: Scalar> DiagonalBlock<T> {
    fn solve(&self, x: &mut [T]) {
        let n = x.len();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockJacobi<T> {
    n: usize,
    blocks: Vec<DiagonalBlock<T>>,
}

impl<T: Scalar> BlockJacobi<T> {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
}

/// Block Jacobi from the `(t, t)` nearfield leaves of a square H²-matrix.
pub fn block_jacobi_from_nearfield<T: Scalar>(h2: &H2Matrix<T>) -> Result<BlockJacobi<T>> {
    let tree = h2.row_tree();
    let bt = h2.block_tree();
    let mut diag = vec![None; tree.len()];
    for &b in bt.inadmissible_leaves() {
        let block = bt.block(b);
        if let (true, BlockKind::Inadmissible { index }) = (block.row == block.col, block.kind) {
            diag[block.row] = Some(index);
        }
    }
    let mut blocks = Vec::new();
    for t in tree.leaves() {
        let index = diag[t].ok_or(H2Error::MissingDiagonalBlock { cluster: t })?;
        let mut lu = h2.nearfield()[index].clone();
        let s = lu.rows();
        for k in 0..s {
            let p = lu[(k, k)];
            if !(p.abs() > PIVOT_FLOOR) || !p.is_finite() {
                return Err(H2Error::SingularDiagonalBlock { cluster: t });
            }
            for i in k + 1..s {
                let l = lu[(i, k)] / p;
                lu[(i, k)] = l;
                for j in k + 1..s {
                    let u = lu[(k, j)];
                    lu[(i, j)] -= l * u;
                }
            }
        }
        blocks.push(DiagonalBlock { label: tree.label(t).to_vec(), lu });
    }
    Ok(BlockJacobi { n: h2.nrows(), blocks })
}

#[derive(Clone, Debug)]
pub enum Preconditioner<T> {
    Identity(usize),
    BlockJacobi(BlockJacobi<T>),
    Factored(Factorization<T>),
}

impl<T: Scalar> Preconditioner<T> {
    pub fn dim(&self) -> usize {
        match self {
            Preconditioner::Identity(n) => *n,
            Preconditioner::BlockJacobi(b) => b.n,
            Preconditioner::Factored(f) => f.dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Preconditioner::Identity(_) => "none",
            Preconditioner::BlockJacobi(_) => "jacobi",
            Preconditioner::Factored(f) => f.kind.name(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Preconditioner::Identity(_))
    }

    /// Solves one column-major `n x c` block in place.
    fn solve_block(&self, block: &mut [T], n: usize) {
        let c = block.len() / n;
        match self {
            Preconditioner::Identity(_) => {}
            Preconditioner::Factored(f) => {
                let mut buf = vec![T::zero(); n * c];
                for j in 0..c {
                    for i in 0..n {
                        buf[i * c + j] = block[j * n + i];
                    }
                }
                f.solve_rows(&mut buf, c);
                for j in 0..c {
                    for i in 0..n {
                        block[j * n + i] = buf[i * c + j];
                    }
                }
            }
            Preconditioner::BlockJacobi(bj) => {
                let mut local = Vec::new();
                for col in block.chunks_mut(n) {
                    for b in &bj.blocks {
                        local.clear();
                        local.extend(b.label.iter().map(|&i| col[i]));
                        b.solve(&mut local);
                        for (&i, &v) in b.label.iter().zip(&local) {
                            col[i] = v;
                        }
                    }
                }
            }
        }
    }

    /// `M^{-1} R`, with the columns of `R` split into `ceil(m / threads)`-sized
    /// chunks solved concurrently.
    pub fn apply_inverse_chunked(&self, r: &MultiVector<T>, threads: usize) -> Result<MultiVector<T>> {
        check_dim("preconditioner rows", self.dim(), r.rows())?;
        let mut out = r.clone();
        let (n, m) = (r.rows(), r.cols());
        if self.is_identity() || m == 0 {
            return Ok(out);
        }
        let threads = parallel::resolve_threads(threads);
        let chunk = m.div_ceil(threads);
        parallel::install(threads, || {
            out.as_mut_slice()
                .par_chunks_mut(n * chunk)
                .for_each(|block| self.solve_block(block, n));
        });
        Ok(out)
    }

    /// Column-by-column application, one solve per right-hand side.
    pub fn apply_inverse(&self, r: &MultiVector<T>) -> Result<MultiVector<T>> {
        check_dim("preconditioner rows", self.dim(), r.rows())?;
        let mut out = r.clone();
        let n = r.rows();
        if n > 0 {
            for col in out.as_mut_slice().chunks_mut(n) {
                self.solve_block(col, n);
            }
        }
        Ok(out)
    }
}
