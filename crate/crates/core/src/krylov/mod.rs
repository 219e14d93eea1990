//! Krylov solvers for one or many right-hand sides.
//!
//! The blocked solvers run `m` independent systems in lockstep: every iteration
//! performs one blocked operator product and one blocked preconditioner
//! application, while the scalar recurrences are kept per column. Iteration
//! continues until every column has converged. Converged columns stay in the
//! blocked products but their iterates are no longer updated, so each column
//! reproduces the corresponding single-system run exactly.

mod cg;
mod gmres;

use std::sync::Mutex;
use std::time::{Duration, Instant};

pub use cg::{block_pcg, cg_solve};
pub use gmres::{block_pgmres, block_pgmres_traced, gmres_solve, GmresState};

use crate::apply::{addeval_block_with, addeval_list_with, Workspace};
use crate::dense::{gemm_update, norm2, DenseMatrix, MultiVector, Op};
use crate::error::{check_dim, H2Error, Result};
use crate::h2matrix::H2Matrix;
use crate::precond::Preconditioner;
use crate::scalar::Scalar;

/// `Y <- Y + alpha A X` for a square operator `A`.
pub trait LinearOperator<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, alpha: T, x: &MultiVector<T>, y: &mut MultiVector<T>) -> Result<()>;
}

impl<T: Scalar> LinearOperator<T> for DenseMatrix<T> {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, alpha: T, x: &MultiVector<T>, y: &mut MultiVector<T>) -> Result<()> {
        gemm_update(y, self, x, alpha, Op::NoTrans)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProductMode {
    /// One blocked product over all columns.
    Blocked,
    /// `m` separate matrix–vector products.
    Columnwise,
}

/// An H²-matrix with its own product workspace.
pub struct H2Operator<'a, T> {
    h2: &'a H2Matrix<T>,
    workspace: Mutex<Workspace<T>>,
    threads: usize,
    mode: ProductMode,
}

impl<'a, T: Scalar> H2Operator<'a, T> {
    pub fn new(h2: &'a H2Matrix<T>, threads: usize, mode: ProductMode) -> Self {
        Self { h2, workspace: Mutex::new(Workspace::new(h2)), threads, mode }
    }

    pub fn matrix(&self) -> &H2Matrix<T> {
        self.h2
    }
}

impl<T: Scalar> LinearOperator<T> for H2Operator<'_, T> {
    fn dim(&self) -> usize {
        self.h2.nrows()
    }

    fn apply(&self, alpha: T, x: &MultiVector<T>, y: &mut MultiVector<T>) -> Result<()> {
        let mut ws = self.workspace.lock().expect("workspace poisoned");
        match self.mode {
            ProductMode::Blocked => addeval_block_with(&mut ws, alpha, self.h2, x, y, self.threads),
            ProductMode::Columnwise => addeval_list_with(&mut ws, alpha, self.h2, x, y, self.threads),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    /// Relative residual tolerance.
    pub eps_slv: f64,
    /// Cap on the number of iterations, counting all restart cycles.
    pub max_iter: usize,
    /// GMRES restart length.
    pub restart: usize,
    pub max_restarts: usize,
    pub threads: usize,
    /// Second Gram–Schmidt pass in GMRES.
    pub reorthogonalize: bool,
    /// GMRES splits the columns into chunks when its basis would exceed this.
    pub memory_cap_bytes: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            eps_slv: 1e-6,
            max_iter: 1000,
            restart: 30,
            max_restarts: 50,
            threads: 0,
            reorthogonalize: false,
            memory_cap_bytes: 1 << 30,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_slv > 0.0) || !self.eps_slv.is_finite() {
            return Err(H2Error::InvalidParameter(format!("eps_slv must be > 0, got {}", self.eps_slv)));
        }
        if self.restart == 0 {
            return Err(H2Error::InvalidParameter("restart length must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnStatus {
    Converged,
    NotConverged,
    Breakdown,
    Stagnated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnReport {
    pub iterations: usize,
    /// Final relative residual in the norm the solver monitors.
    pub residual: f64,
    /// `|b - A x| / |b|`, computed once at exit.
    pub true_residual: f64,
    pub status: ColumnStatus,
    /// Relative residual after every iteration, starting with the initial one.
    pub history: Vec<f64>,
    /// Positions in `history` where a GMRES cycle begins.
    pub cycle_starts: Vec<usize>,
}

impl ColumnReport {
    fn new() -> Self {
        Self {
            iterations: 0,
            residual: f64::NAN,
            true_residual: f64::NAN,
            status: ColumnStatus::NotConverged,
            history: Vec::new(),
            cycle_starts: Vec::new(),
        }
    }

    pub fn converged(&self) -> bool {
        self.status == ColumnStatus::Converged
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub solver: &'static str,
    pub columns: Vec<ColumnReport>,
    /// Blocked iterations performed; the maximum over the columns.
    pub iterations: usize,
    pub t_total: f64,
    pub t_addmul: f64,
    pub t_precond: f64,
    pub t_core: f64,
}

impl SolveReport {
    pub fn converged_count(&self) -> usize {
        self.columns.iter().filter(|c| c.converged()).count()
    }

    pub fn all_converged(&self) -> bool {
        self.converged_count() == self.columns.len()
    }

    pub fn max_true_residual(&self) -> f64 {
        self.columns.iter().map(|c| c.true_residual).fold(0.0, f64::max)
    }

    fn merge(&mut self, other: SolveReport) {
        self.columns.extend(other.columns);
        self.iterations = self.iterations.max(other.iterations);
        self.t_total += other.t_total;
        self.t_addmul += other.t_addmul;
        self.t_precond += other.t_precond;
        self.t_core += other.t_core;
    }
}

/// Wall time split into operator products, preconditioner applications and
/// the remaining solver arithmetic.
#[derive(Default)]
struct Clock {
    addmul: Duration,
    precond: Duration,
    core: Duration,
}

impl Clock {
    fn addmul<R>(&mut self, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        self.addmul += t.elapsed();
        r
    }

    fn precond<R>(&mut self, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        self.precond += t.elapsed();
        r
    }

    fn core<R>(&mut self, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        self.core += t.elapsed();
        r
    }

    fn report(&self, solver: &'static str, columns: Vec<ColumnReport>, start: Instant) -> SolveReport {
        let iterations = columns.iter().map(|c| c.iterations).max().unwrap_or(0);
        SolveReport {
            solver,
            columns,
            iterations,
            t_total: start.elapsed().as_secs_f64(),
            t_addmul: self.addmul.as_secs_f64(),
            t_precond: self.precond.as_secs_f64(),
            t_core: self.core.as_secs_f64(),
        }
    }
}

fn check_system<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    m: &Preconditioner<T>,
    b: &MultiVector<T>,
    x0: &MultiVector<T>,
    opts: &SolveOptions,
) -> Result<()> {
    opts.validate()?;
    if a.dim() == 0 {
        return Err(H2Error::EmptyInput("operator"));
    }
    check_dim("solve: rhs rows", a.dim(), b.rows())?;
    check_dim("solve: preconditioner", a.dim(), m.dim())?;
    check_dim("solve: x0 rows", b.rows(), x0.rows())?;
    check_dim("solve: x0 columns", b.cols(), x0.cols())
}

/// `b - A x`, columnwise norms relative to `b`, written into the reports.
fn true_residuals<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &MultiVector<T>,
    x: &MultiVector<T>,
    columns: &mut [ColumnReport],
    clock: &mut Clock,
) -> Result<()> {
    let mut r = b.clone();
    clock.addmul(|| a.apply(T::from_real(-1.0), x, &mut r))?;
    for (j, c) in columns.iter_mut().enumerate() {
        let nb = norm2(b.col(j));
        let nr = norm2(r.col(j));
        c.true_residual = if nb > 0.0 { nr / nb } else { nr };
    }
    Ok(())
}

fn single_column<T: Scalar>(v: &[T]) -> MultiVector<T> {
    DenseMatrix::from_columns(v.len(), &[v.to_vec()])
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Gaussian elimination with partial pivoting.
    pub fn dense_solve<T: Scalar>(a: &DenseMatrix<T>, b: &MultiVector<T>) -> MultiVector<T> {
        let n = a.rows();
        let mut a = a.clone();
        let mut x = b.clone();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs())).unwrap();
            for j in 0..n {
                let t = a[(k, j)];
                a[(k, j)] = a[(p, j)];
                a[(p, j)] = t;
            }
            for j in 0..x.cols() {
                let t = x[(k, j)];
                x[(k, j)] = x[(p, j)];
                x[(p, j)] = t;
            }
            for i in k + 1..n {
                let l = a[(i, k)] / a[(k, k)];
                for j in k..n {
                    let u = a[(k, j)];
                    a[(i, j)] -= l * u;
                }
                for j in 0..x.cols() {
                    let u = x[(k, j)];
                    x[(i, j)] -= l * u;
                }
            }
        }
        for j in 0..x.cols() {
            for i in (0..n).rev() {
                let mut s = x[(i, j)];
                for k in i + 1..n {
                    s -= a[(i, k)] * x[(k, j)];
                }
                x[(i, j)] = s / a[(i, i)];
            }
        }
        x
    }

    pub fn rel_col_err<T: Scalar>(x: &[T], y: &[T]) -> f64 {
        let d: f64 = x.iter().zip(y).map(|(a, b)| (*a - *b).abs2()).sum();
        d.sqrt() / norm2(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fibonacci_sphere;
    use crate::h2matrix::H2Params;
    use crate::kernel::Laplace3d;

    #[test]
    fn options_validation() {
        assert!(SolveOptions::default().validate().is_ok());
        assert!(SolveOptions { eps_slv: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolveOptions { restart: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn h2_operator_modes_agree() {
        let cloud = fibonacci_sphere(300, 1.0).unwrap();
        let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, H2Params::default()).unwrap();
        let x = DenseMatrix::from_fn(300, 3, |i, j| ((i * 7 + j) % 11) as f64 - 5.0);
        let mut a = DenseMatrix::zeros(300, 3);
        H2Operator::new(&h2, 2, ProductMode::Blocked).apply(1.0, &x, &mut a).unwrap();
        let mut b = DenseMatrix::zeros(300, 3);
        H2Operator::new(&h2, 2, ProductMode::Columnwise).apply(1.0, &x, &mut b).unwrap();
        assert_eq!(a, b);
    }
}
