use std::time::Instant;

use rayon::prelude::*;

use super::{check_system, single_column, true_residuals, Clock, ColumnReport, ColumnStatus, LinearOperator, SolveOptions, SolveReport};
use crate::dense::{axpy, dot, gemm_update, make_givens, norm2, upper_tri_solve, DenseMatrix, GivensRotation, MultiVector, Op};
use crate::error::Result;
use crate::parallel;
use crate::precond::Preconditioner;
use crate::scalar::Scalar;

const HAPPY_BREAKDOWN: f64 = 1e-14;
const STAGNATION: f64 = 1e-14;

/// Arnoldi data of one column at the end of its last restart cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct GmresState<T> {
    /// `n x (k + 1)` orthonormal Krylov basis.
    pub basis: DenseMatrix<T>,
    /// `(k + 1) x k` Hessenberg matrix as built by Arnoldi.
    pub hessenberg: DenseMatrix<T>,
    /// The same matrix after the Givens rotations; its top `k x k` block is `R`.
    pub rotated: DenseMatrix<T>,
    pub rotations: Vec<GivensRotation<T>>,
    /// Rotated residual vector, length `k + 1`.
    pub rhat: Vec<T>,
}

impl<T: Scalar> GmresState<T> {
    fn empty(n: usize) -> Self {
        Self {
            basis: DenseMatrix::zeros(n, 0),
            hessenberg: DenseMatrix::zeros(0, 0),
            rotated: DenseMatrix::zeros(0, 0),
            rotations: Vec::new(),
            rhat: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.rotations.len()
    }

    /// `max |V^* V - I|` over the stored basis.
    pub fn orthogonality_loss(&self) -> f64 {
        let k = self.basis.cols();
        let mut gram = DenseMatrix::zeros(k, k);
        gemm_update(&mut gram, &self.basis, &self.basis, T::one(), Op::ConjTrans).expect("gram shape");
        gram.max_abs_diff(&DenseMatrix::identity(k))
    }
}

struct Column<T> {
    report: ColumnReport,
    reference: f64,
    /// Still extending its Krylov space in the current cycle.
    extending: bool,
    /// Took part in the current cycle.
    cycling: bool,
    happy: bool,
    steps: usize,
    cycle_start: f64,
    rhat: Vec<T>,
    rotations: Vec<GivensRotation<T>>,
}

/// Left-preconditioned restarted GMRES for a single system.
pub fn gmres_solve<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    m: &Preconditioner<T>,
    b: &[T],
    x0: &[T],
    opts: &SolveOptions,
) -> Result<(Vec<T>, SolveReport)> {
    let (x, report, _) = pgmres(a, m, &single_column(b), &single_column(x0), opts, false)?;
    Ok((x.into_vec(), report))
}

/// Left-preconditioned GMRES(`restart`) on every column of `B`, each column with
/// its own Krylov space, one blocked `M^{-1} A` application per iteration.
///
/// Convergence is tested on the preconditioned residual relative to `|M^{-1} b|`;
/// the report also carries the true residual at exit. When the Krylov bases of
/// all columns would exceed `opts.memory_cap_bytes`, the columns are solved in
/// consecutive chunks.
pub fn block_pgmres<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    m: &Preconditioner<T>,
    b: &MultiVector<T>,
    x0: &MultiVector<T>,
    opts: &SolveOptions,
) -> Result<(MultiVector<T>, SolveReport)> {
    let (x, report, _) = chunked(a, m, b, x0, opts, false)?;
    Ok((x, report))
}

/// [`block_pgmres`] that also returns the final Arnoldi state of every column.
pub fn block_pgmres_traced<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    m: &Preconditioner<T>,
    b: &MultiVector<T>,
    x0: &MultiVector<T>,
    opts: &SolveOptions,
) -> Result<(MultiVector<T>, SolveReport, Vec<GmresState<T>>)> {
    chunked(a, m, b, x0, opts, true)
}

fn chunked<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    m: &Preconditioner<T>,
    b: &MultiVector<T>,
    x0: &MultiVector<T>,
    opts: &SolveOptions,
    trace: bool,
) -> Result<(MultiVector<T>, SolveReport, Vec<GmresState<T>>)> {
    check_system(a, m, b, x0, opts)?;
    let (n, nrhs) = (b.rows(), b.cols());
    let per_column = n * (opts.restart + 1) * std::mem::size_of::<T>();
    let chunk = (opts.memory_cap_bytes / per_column.max(1)).max(1);
    if chunk >= nrhs {
        return pgmres(a, m, b, x0, opts, trace);
    }
    log::info!("gmres: solving {nrhs} columns in chunks of {chunk}");
    let mut x = x0.clone();
    let mut report: Option<SolveReport> = None;
    let mut states = Vec::new();
    for lo in (0..nrhs).step_by(chunk) {
        let hi = (lo + chunk).min(nrhs);
        let (xc, rc, sc) = pgmres(a, m, &b.columns(lo..hi), &x0.columns(lo..hi), opts, trace)?;
        x.set_columns(lo, &xc);
        states.extend(sc);
        match report.as_mut() {
            Some(r) => r.merge(rc),
            None => report = Some(rc),
        }
    }
    Ok((x, report.expect("at least one chunk"), states))
}

fn pgmres<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    m: &Preconditioner<T>,
    b: &MultiVector<T>,
    x0: &MultiVector<T>,
    opts: &SolveOptions,
    trace: bool,
) -> Result<(MultiVector<T>, SolveReport, Vec<GmresState<T>>)> {
    check_system(a, m, b, x0, opts)?;
    let start = Instant::now();
    let mut clock = Clock::default();
    let (n, nrhs) = (b.rows(), b.cols());
    let (threads, eps, ell) = (opts.threads, opts.eps_slv, opts.restart);
    let ld = (ell + 1) * ell;
    let solver = if m.is_identity() { "gmres" } else { "pgmres" };

    let mut x = x0.clone();
    let mb = clock.precond(|| m.apply_inverse_chunked(b, threads))?;
    let mut cols: Vec<Column<T>> = (0..nrhs)
        .map(|j| Column {
            report: ColumnReport::new(),
            reference: norm2(mb.col(j)),
            extending: false,
            cycling: false,
            happy: false,
            steps: 0,
            cycle_start: f64::INFINITY,
            rhat: vec![T::zero(); ell + 1],
            rotations: Vec::with_capacity(ell),
        })
        .collect();
    for (j, c) in cols.iter_mut().enumerate() {
        if c.reference == 0.0 {
            x.col_mut(j).fill(T::zero());
            c.report.residual = 0.0;
            c.report.history.push(0.0);
            c.report.status = ColumnStatus::Converged;
        }
    }
    // rotated and unrotated Hessenberg matrices, one (ell+1) x ell block per column
    let mut hess = DenseMatrix::<T>::zeros(ld, nrhs);
    let mut raw = DenseMatrix::<T>::zeros(ld, nrhs);
    let mut basis: Vec<MultiVector<T>> = Vec::with_capacity(ell + 1);
    let mut states: Vec<GmresState<T>> = (0..nrhs).map(|_| GmresState::empty(n)).collect();
    let mut total = 0;

    for cycle in 0..=opts.max_restarts {
        if total >= opts.max_iter || cols.iter().all(|c| c.report.status != ColumnStatus::NotConverged) {
            break;
        }
        let mut r = b.clone();
        clock.addmul(|| a.apply(T::from_real(-1.0), &x, &mut r))?;
        let mut z = clock.precond(|| m.apply_inverse_chunked(&r, threads))?;
        clock.core(|| {
            parallel::install(threads, || {
                z.as_mut_slice()
                    .par_chunks_mut(n)
                    .zip(hess.as_mut_slice().par_chunks_mut(ld))
                    .zip(raw.as_mut_slice().par_chunks_mut(ld))
                    .zip(cols.par_iter_mut())
                    .for_each(|(((z, h), hr), c)| start_cycle(c, cycle, z, h, hr, eps))
            })
        });
        basis.clear();
        basis.push(z);

        let mut k = 0;
        while k < ell && total < opts.max_iter && cols.iter().any(|c| c.extending) {
            let mut w = DenseMatrix::zeros(n, nrhs);
            clock.addmul(|| a.apply(T::one(), &basis[k], &mut w))?;
            let mut v = clock.precond(|| m.apply_inverse_chunked(&w, threads))?;
            let basis_ref = &basis;
            clock.core(|| {
                parallel::install(threads, || {
                    v.as_mut_slice()
                        .par_chunks_mut(n)
                        .zip(hess.as_mut_slice().par_chunks_mut(ld))
                        .zip(raw.as_mut_slice().par_chunks_mut(ld))
                        .zip(cols.par_iter_mut())
                        .enumerate()
                        .for_each(|(i, (((v, h), hr), c))| {
                            if !c.extending {
                                v.fill(T::zero());
                                return;
                            }
                            arnoldi_step(c, i, k, basis_ref, v, h, hr, ell, opts.reorthogonalize, eps);
                        })
                })
            });
            basis.push(v);
            k += 1;
            total += 1;
        }

        let basis_ref = &basis;
        clock.core(|| {
            parallel::install(threads, || {
                x.as_mut_slice()
                    .par_chunks_mut(n)
                    .zip(hess.as_slice().par_chunks(ld))
                    .zip(raw.as_slice().par_chunks(ld))
                    .zip(cols.par_iter_mut())
                    .zip(states.par_iter_mut())
                    .enumerate()
                    .for_each(|(i, ((((x, h), hr), c), st))| {
                        if !c.cycling {
                            return;
                        }
                        finish_cycle(c, i, basis_ref, x, h, ell, eps);
                        if trace {
                            *st = snapshot(c, i, basis_ref, h, hr, ell);
                        }
                        c.cycling = false;
                        c.extending = false;
                    })
            })
        });
    }

    let mut reports: Vec<ColumnReport> = cols.into_iter().map(|c| c.report).collect();
    true_residuals(a, b, &x, &mut reports, &mut clock)?;
    Ok((x, clock.report(solver, reports, start), states))
}

fn start_cycle<T: Scalar>(c: &mut Column<T>, cycle: usize, z: &mut [T], h: &mut [T], hr: &mut [T], eps: f64) {
    if c.report.status != ColumnStatus::NotConverged {
        z.fill(T::zero());
        return;
    }
    let beta = norm2(z);
    let rel = beta / c.reference;
    c.report.residual = rel;
    if cycle > 0 && c.cycle_start - rel <= STAGNATION * c.cycle_start {
        c.report.status = ColumnStatus::Stagnated;
        z.fill(T::zero());
        return;
    }
    c.cycle_start = rel;
    c.report.cycle_starts.push(c.report.history.len());
    c.report.history.push(rel);
    if rel <= eps {
        c.report.status = ColumnStatus::Converged;
        z.fill(T::zero());
        return;
    }
    c.extending = true;
    c.cycling = true;
    c.happy = false;
    c.steps = 0;
    c.rhat.fill(T::zero());
    c.rhat[0] = T::from_real(beta);
    c.rotations.clear();
    h.fill(T::zero());
    hr.fill(T::zero());
    let inv = 1.0 / beta;
    z.iter_mut().for_each(|v| *v = v.scale(inv));
}

/// Orthogonalizes `v = M^{-1} A q_k` against the column's basis, extends its
/// Hessenberg column `k`, and updates the rotated residual.
#[allow(clippy::too_many_arguments)]
fn arnoldi_step<T: Scalar>(
    c: &mut Column<T>,
    i: usize,
    k: usize,
    basis: &[MultiVector<T>],
    v: &mut [T],
    h: &mut [T],
    hr: &mut [T],
    ell: usize,
    reorthogonalize: bool,
    eps: f64,
) {
    let col = &mut h[k * (ell + 1)..(k + 1) * (ell + 1)];
    let scale = norm2(v);
    for (j, q) in basis.iter().enumerate().take(k + 1) {
        let q = q.col(i);
        let hj = dot(q, v);
        axpy(-hj, q, v);
        col[j] = hj;
    }
    if reorthogonalize {
        for (j, q) in basis.iter().enumerate().take(k + 1) {
            let q = q.col(i);
            let hj = dot(q, v);
            axpy(-hj, q, v);
            col[j] += hj;
        }
    }
    let hn = norm2(v);
    col[k + 1] = T::from_real(hn);
    hr[k * (ell + 1)..(k + 1) * (ell + 1)].copy_from_slice(col);
    if hn <= HAPPY_BREAKDOWN * scale {
        c.happy = true;
        v.fill(T::zero());
    } else {
        let inv = 1.0 / hn;
        v.iter_mut().for_each(|x| *x = x.scale(inv));
    }
    for (j, g) in c.rotations.iter().enumerate() {
        let (top, bottom) = col.split_at_mut(j + 1);
        g.apply(&mut top[j], &mut bottom[0]);
    }
    let g = make_givens(col[k], col[k + 1]);
    col[k] = g.r;
    col[k + 1] = T::zero();
    let (top, bottom) = c.rhat.split_at_mut(k + 1);
    g.apply(&mut top[k], &mut bottom[0]);
    c.rotations.push(g);
    c.steps = k + 1;
    c.report.iterations += 1;
    let rel = c.rhat[k + 1].abs() / c.reference;
    c.report.residual = rel;
    c.report.history.push(rel);
    if rel <= eps || c.happy {
        c.extending = false;
    }
}

/// Solves the small triangular system and updates `x`.
fn finish_cycle<T: Scalar>(c: &mut Column<T>, i: usize, basis: &[MultiVector<T>], x: &mut [T], h: &[T], ell: usize, eps: f64) {
    let k = c.steps;
    if k == 0 {
        return;
    }
    let rmat = DenseMatrix::from_col_major(ell + 1, ell, h.to_vec()).expect("hessenberg block shape");
    match upper_tri_solve(&rmat, &c.rhat[..k]) {
        Ok(y) => {
            for (j, &yj) in y.iter().enumerate() {
                axpy(yj, basis[j].col(i), x);
            }
            if c.report.residual <= eps || c.happy {
                c.report.status = ColumnStatus::Converged;
            }
        }
        Err(_) => c.report.status = ColumnStatus::Breakdown,
    }
}

fn snapshot<T: Scalar>(c: &Column<T>, i: usize, basis: &[MultiVector<T>], h: &[T], hr: &[T], ell: usize) -> GmresState<T> {
    let k = c.steps;
    let n = basis[0].rows();
    let block = |src: &[T]| DenseMatrix::from_fn(k + 1, k, |r, j| src[j * (ell + 1) + r]);
    GmresState {
        basis: DenseMatrix::from_fn(n, k + 1, |r, j| basis[j].col(i)[r]),
        hessenberg: block(hr),
        rotated: block(h),
        rotations: c.rotations.clone(),
        rhat: c.rhat[..=k].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::{dense_solve, rel_col_err};
    use super::super::{H2Operator, ProductMode};
    use super::*;
    use crate::geometry::fibonacci_sphere;
    use crate::h2matrix::{H2Matrix, H2Params};
    use crate::kernel::{Helmholtz3d, Laplace3d};
    use crate::precond::ilu_drop_factor;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn opts(eps: f64) -> SolveOptions {
        SolveOptions { eps_slv: eps, threads: 2, ..Default::default() }
    }

    fn helmholtz(n: usize) -> H2Matrix<Complex64> {
        let cloud = fibonacci_sphere(n, 1.0).unwrap();
        H2Matrix::build(&Helmholtz3d { kappa: 1.0 }, &cloud, H2Params::default()).unwrap()
    }

    fn random_cmv(n: usize, m: usize, seed: u64) -> MultiVector<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(n, m, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn identity_converges_in_one_step() {
        let a = DenseMatrix::<f64>::identity(4);
        let b = [1.0, 2.0, -1.0, 0.5];
        let (x, rep) = gmres_solve(&a, &Preconditioner::Identity(4), &b, &[0.0; 4], &opts(1e-12)).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rel_col_err(&x, &b) < 1e-15);
    }

    #[test]
    fn rotation_needs_two_steps() {
        let a = DenseMatrix::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]]);
        let (x, rep) = gmres_solve(&a, &Preconditioner::Identity(2), &[1.0, 0.0], &[0.0; 2], &opts(1e-12)).unwrap();
        assert_eq!(rep.iterations, 2);
        assert!(rep.all_converged());
        assert!(x[0].abs() < 1e-15 && (x[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn restart_one_stagnates_on_rotation() {
        let a = DenseMatrix::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]]);
        let o = SolveOptions { restart: 1, ..opts(1e-12) };
        let (_, rep) = gmres_solve(&a, &Preconditioner::Identity(2), &[1.0, 0.0], &[0.0; 2], &o).unwrap();
        assert_eq!(rep.columns[0].status, ColumnStatus::Stagnated);
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn singular_operator_is_flagged() {
        let a = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let (_, rep) = gmres_solve(&a, &Preconditioner::Identity(2), &[0.0, 1.0], &[0.0; 2], &opts(1e-12)).unwrap();
        assert_eq!(rep.columns[0].status, ColumnStatus::Breakdown);
    }

    #[test]
    fn helmholtz_with_ilu_reaches_true_residual() {
        let h2 = helmholtz(512);
        let op = H2Operator::new(&h2, 2, ProductMode::Blocked);
        let m = Preconditioner::Factored(ilu_drop_factor(&h2.densify(), 1e-2).unwrap());
        let b = random_cmv(512, 1, 1);
        let eps = 1e-8;
        let (x, rep) = gmres_solve(&op, &m, b.col(0), &[Complex64::default(); 512], &opts(eps)).unwrap();
        assert!(rep.all_converged());
        assert!(rep.columns[0].true_residual <= 10.0 * eps);
        let direct = dense_solve(&h2.densify(), &b);
        assert!(rel_col_err(&x, direct.col(0)) <= 1e-5);
    }

    #[test]
    fn single_column_block_is_gmres() {
        let h2 = helmholtz(256);
        let op = H2Operator::new(&h2, 1, ProductMode::Blocked);
        let m = Preconditioner::Factored(ilu_drop_factor(&h2.densify(), 1e-1).unwrap());
        let b = random_cmv(256, 1, 2);
        let x0 = DenseMatrix::zeros(256, 1);
        let o = SolveOptions { restart: 5, ..opts(1e-10) };
        let (x, rep) = gmres_solve(&op, &m, b.col(0), x0.col(0), &o).unwrap();
        let (xb, repb) = block_pgmres(&op, &m, &b, &x0, &o).unwrap();
        assert_eq!(xb.col(0), &x[..]);
        assert_eq!(repb.columns[0].history, rep.columns[0].history);
        assert!(rep.columns[0].cycle_starts.len() > 1);
    }

    #[test]
    fn block_columns_match_single_runs() {
        let h2 = helmholtz(512);
        let op = H2Operator::new(&h2, 2, ProductMode::Blocked);
        let m = Preconditioner::Factored(ilu_drop_factor(&h2.densify(), 1e-1).unwrap());
        let b = random_cmv(512, 8, 3);
        let x0 = DenseMatrix::zeros(512, 8);
        let o = SolveOptions { restart: 10, ..opts(1e-9) };
        let (x, rep) = block_pgmres(&op, &m, &b, &x0, &o).unwrap();
        assert!(rep.all_converged());
        let mut max_single = 0;
        for j in 0..8 {
            let (xj, rj) = block_pgmres(&op, &m, &b.columns(j..j + 1), &x0.columns(j..j + 1), &o).unwrap();
            assert!(rel_col_err(x.col(j), xj.col(0)) <= 1e-10);
            assert_eq!(rep.columns[j].history, rj.columns[0].history);
            max_single = max_single.max(rj.iterations);
        }
        assert_eq!(rep.iterations, max_single);
    }

    #[test]
    fn identical_columns_have_identical_states() {
        let h2 = helmholtz(256);
        let op = H2Operator::new(&h2, 2, ProductMode::Blocked);
        let b1 = random_cmv(256, 1, 4);
        let b = DenseMatrix::from_fn(256, 3, |i, _| b1[(i, 0)]);
        let (_, _, states) =
            block_pgmres_traced(&op, &Preconditioner::Identity(256), &b, &DenseMatrix::zeros(256, 3), &opts(1e-8)).unwrap();
        assert_eq!(states[1], states[0]);
        assert_eq!(states[2], states[0]);
    }

    #[test]
    fn residual_estimate_is_monotone_within_cycles() {
        let h2 = helmholtz(512);
        let op = H2Operator::new(&h2, 2, ProductMode::Blocked);
        let b = random_cmv(512, 4, 5);
        let o = SolveOptions { restart: 8, ..opts(1e-10) };
        let (_, rep) = block_pgmres(&op, &Preconditioner::Identity(512), &b, &DenseMatrix::zeros(512, 4), &o).unwrap();
        for c in &rep.columns {
            let mut bounds = c.cycle_starts.clone();
            bounds.push(c.history.len());
            for w in bounds.windows(2) {
                let cycle = &c.history[w[0]..w[1]];
                assert!(cycle.windows(2).all(|p| p[1] <= p[0] + 1e-14), "{cycle:?}");
            }
        }
    }

    #[test]
    fn arnoldi_relation_and_orthonormality() {
        let cloud = fibonacci_sphere(200, 1.0).unwrap();
        let g = crate::h2matrix::dense_kernel_matrix::<Complex64, _>(&Helmholtz3d { kappa: 2.0 }, &cloud);
        let m = Preconditioner::Factored(ilu_drop_factor(&g, 1e-1).unwrap());
        let b = random_cmv(200, 2, 6);
        for reorthogonalize in [false, true] {
            let o = SolveOptions { restart: 15, max_restarts: 0, reorthogonalize, ..opts(1e-12) };
            let (_, _, states) = block_pgmres_traced(&g, &m, &b, &DenseMatrix::zeros(200, 2), &o).unwrap();
            for st in &states {
                let k = st.steps();
                assert!(k > 0);
                let vk = st.basis.columns(0..k);
                let mut av = DenseMatrix::zeros(200, k);
                gemm_update(&mut av, &g, &vk, Complex64::new(1.0, 0.0), Op::NoTrans).unwrap();
                let lhs = m.apply_inverse(&av).unwrap();
                let rhs = st.basis.matmul(&st.hessenberg).unwrap();
                let diff: f64 = lhs.as_slice().iter().zip(rhs.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum();
                assert!(diff.sqrt() <= 1e-10 * st.hessenberg.frobenius_norm());
                // R is the rotated Hessenberg matrix
                assert!(st.rotated[(k, k - 1)] == Complex64::default());
                if reorthogonalize {
                    assert!(st.orthogonality_loss() <= 1e-10, "{}", st.orthogonality_loss());
                }
            }
        }
    }

    #[test]
    fn single_pass_loses_orthogonality_only_near_convergence() {
        let cloud = fibonacci_sphere(200, 1.0).unwrap();
        let g = crate::h2matrix::dense_kernel_matrix::<Complex64, _>(&Helmholtz3d { kappa: 2.0 }, &cloud);
        let b = random_cmv(200, 1, 8);
        let o = SolveOptions { restart: 30, max_restarts: 0, ..opts(1e-6) };
        let (_, rep, states) = block_pgmres_traced(&g, &Preconditioner::Identity(200), &b, &DenseMatrix::zeros(200, 1), &o).unwrap();
        // loss grows like unit roundoff over the residual reduction
        assert!(states[0].orthogonality_loss() <= 1e-12 / rep.columns[0].residual);
    }

    #[test]
    fn ilu_quality_reduces_iterations() {
        let h2 = helmholtz(256);
        let g = h2.densify();
        let op = H2Operator::new(&h2, 2, ProductMode::Blocked);
        let b = random_cmv(256, 4, 9);
        let x0 = DenseMatrix::zeros(256, 4);
        let counts: Vec<usize> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&tau| {
                let m = Preconditioner::Factored(ilu_drop_factor(&g, tau).unwrap());
                let (_, rep) = block_pgmres(&op, &m, &b, &x0, &opts(1e-8)).unwrap();
                assert!(rep.all_converged());
                rep.iterations
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[1] < w[0]), "{counts:?}");
    }

    #[test]
    fn memory_cap_chunks_without_changing_results() {
        let cloud = fibonacci_sphere(256, 1.0).unwrap();
        let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, H2Params::default()).unwrap();
        let op = H2Operator::new(&h2, 2, ProductMode::Blocked);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = DenseMatrix::from_fn(256, 5, |_, _| rng.random_range(-1.0..1.0));
        let x0 = DenseMatrix::zeros(256, 5);
        let o = opts(1e-9);
        let (x, rep) = block_pgmres(&op, &Preconditioner::Identity(256), &b, &x0, &o).unwrap();
        let capped = SolveOptions { memory_cap_bytes: 2 * 256 * (o.restart + 1) * 8, ..o };
        let (xc, repc) = block_pgmres(&op, &Preconditioner::Identity(256), &b, &x0, &capped).unwrap();
        assert_eq!(x, xc);
        assert_eq!(rep.columns, repc.columns);
        assert_eq!(rep.iterations, repc.iterations);
    }
}
