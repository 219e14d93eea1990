use std::time::Instant;

use rayon::prelude::*;

use super::{check_system, single_column, true_residuals, Clock, ColumnReport, ColumnStatus, LinearOperator, SolveOptions, SolveReport};
use crate::dense::{axpy, dot, norm2, DenseMatrix, MultiVector};
use crate::error::{H2Error, Result};
use crate::parallel;
use crate::precond::Preconditioner;
use crate::scalar::Scalar;

const BREAKDOWN: f64 = 1e-300;

/// Conjugate gradients for a single Hermitian positive definite system.
///
/// Stops when `|r| <= eps_slv |b|`. A nonpositive curvature `<p, A p>` is reported
/// as [`H2Error::Breakdown`].
pub fn cg_solve<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &[T],
    x0: &[T],
    opts: &SolveOptions,
) -> Result<(Vec<T>, SolveReport)> {
    let m = Preconditioner::Identity(a.dim());
    let (x, report) = pcg(a, &m, &single_column(b), &single_column(x0), opts, "cg")?;
    if report.columns[0].status == ColumnStatus::Breakdown {
        return Err(H2Error::Breakdown(format!(
            "nonpositive curvature after {} iterations; operator is not positive definite",
            report.columns[0].iterations
        )));
    }
    Ok((x.into_vec(), report))
}

/// Preconditioned CG on all columns of `B` in lockstep.
///
/// A column whose curvature breaks down is flagged and frozen; the others continue.
pub fn block_pcg<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    m: &Preconditioner<T>,
    b: &MultiVector<T>,
    x0: &MultiVector<T>,
    opts: &SolveOptions,
) -> Result<(MultiVector<T>, SolveReport)> {
    pcg(a, m, b, x0, opts, if m.is_identity() { "cg" } else { "pcg" })
}

fn pcg<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    m: &Preconditioner<T>,
    b: &MultiVector<T>,
    x0: &MultiVector<T>,
    opts: &SolveOptions,
    solver: &'static str,
) -> Result<(MultiVector<T>, SolveReport)> {
    check_system(a, m, b, x0, opts)?;
    let start = Instant::now();
    let mut clock = Clock::default();
    let (n, nrhs) = (b.rows(), b.cols());
    let threads = opts.threads;
    let eps = opts.eps_slv;

    let mut x = x0.clone();
    let mut r = b.clone();
    clock.addmul(|| a.apply(T::from_real(-1.0), &x, &mut r))?;
    let bnorm: Vec<f64> = (0..nrhs).map(|j| norm2(b.col(j))).collect();
    let mut cols: Vec<ColumnReport> = (0..nrhs).map(|_| ColumnReport::new()).collect();
    for (j, c) in cols.iter_mut().enumerate() {
        if bnorm[j] == 0.0 {
            x.col_mut(j).fill(T::zero());
            r.col_mut(j).fill(T::zero());
            c.residual = 0.0;
        } else {
            c.residual = norm2(r.col(j)) / bnorm[j];
        }
        c.history.push(c.residual);
        if c.residual <= eps {
            c.status = ColumnStatus::Converged;
        }
    }
    let mut q = clock.precond(|| m.apply_inverse_chunked(&r, threads))?;
    let mut p = q.clone();
    let mut beta = vec![T::zero(); nrhs];

    let mut k = 0;
    while k < opts.max_iter && cols.iter().any(|c| c.status == ColumnStatus::NotConverged) {
        let mut ap = DenseMatrix::zeros(n, nrhs);
        clock.addmul(|| a.apply(T::one(), &p, &mut ap))?;
        clock.core(|| {
            parallel::install(threads, || {
                x.as_mut_slice()
                    .par_chunks_mut(n)
                    .zip(r.as_mut_slice().par_chunks_mut(n))
                    .zip(p.as_slice().par_chunks(n))
                    .zip(ap.as_slice().par_chunks(n))
                    .zip(cols.par_iter_mut())
                    .zip(beta.par_iter_mut())
                    .for_each(|(((((x, r), p), ap), c), beta)| {
                        if c.status != ColumnStatus::NotConverged {
                            return;
                        }
                        let bt = dot(p, ap);
                        if !(bt.re() > BREAKDOWN) || !bt.is_finite() {
                            c.status = ColumnStatus::Breakdown;
                            return;
                        }
                        let alpha = dot(p, r) / bt;
                        axpy(alpha, p, x);
                        axpy(-alpha, ap, r);
                        *beta = bt;
                    })
            })
        });
        q = clock.precond(|| m.apply_inverse_chunked(&r, threads))?;
        clock.core(|| {
            parallel::install(threads, || {
                p.as_mut_slice()
                    .par_chunks_mut(n)
                    .zip(q.as_slice().par_chunks(n))
                    .zip(r.as_slice().par_chunks(n))
                    .zip(ap.as_slice().par_chunks(n))
                    .zip(cols.par_iter_mut())
                    .zip(beta.par_iter().zip(bnorm.par_iter()))
                    .for_each(|(((((p, q), r), ap), c), (&beta, &bn))| {
                        if c.status != ColumnStatus::NotConverged {
                            return;
                        }
                        let gamma = dot(ap, q) / beta;
                        for (pi, &qi) in p.iter_mut().zip(q) {
                            *pi = qi - gamma * *pi;
                        }
                        c.iterations += 1;
                        c.residual = norm2(r) / bn;
                        c.history.push(c.residual);
                        if c.residual <= eps {
                            c.status = ColumnStatus::Converged;
                        }
                    })
            })
        });
        k += 1;
    }
    true_residuals(a, b, &x, &mut cols, &mut clock)?;
    Ok((x, clock.report(solver, cols, start)))
}
