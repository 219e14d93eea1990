//! Benchmark drivers behind the `h2bench` binary.
//!
//! Each driver takes one [`RunConfig`] point of a sweep and returns one CSV
//! record. Timings are medians of [`REPETITIONS`] runs after one discarded
//! warmup run.

use std::fmt::Display;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::apply::{addeval_block_with, addeval_list_with, Workspace};
use crate::dense::{norm2, DenseMatrix, MultiVector};
use crate::error::H2Error;
use crate::geometry::{fibonacci_sphere, PointCloud};
use crate::h2matrix::{dense_kernel_matrix, relative_frobenius_error, H2Matrix, H2Params};
use crate::kernel::{Helmholtz3d, Laplace3d};
use crate::krylov::{block_pcg, block_pgmres, H2Operator, LinearOperator, ProductMode, SolveOptions};
use crate::parallel::resolve_threads;
use crate::precond::{block_jacobi_from_nearfield, ic_drop_factor, ilu_drop_factor, Preconditioner};
use crate::scalar::Scalar;

pub const REPETITIONS: usize = 5;
pub const DEFAULT_MAX_N: usize = 65536;
/// Largest `n` for which a dense matrix is ever formed.
pub const DENSE_MAX_N: usize = 4096;
/// Largest `n` cross-checked against the dense oracle by `--verify`.
pub const VERIFY_MAX_N: usize = 2048;
pub const ORACLE_TOL: f64 = 1e-12;
pub const COLUMN_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Geometry {
    Sphere,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum KernelKind {
    Laplace,
    Helmholtz,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Laplace => "laplace",
            KernelKind::Helmholtz => "helmholtz",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SolverKind {
    Cg,
    Pcg,
    Gmres,
    Pgmres,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Cg => "cg",
            SolverKind::Pcg => "pcg",
            SolverKind::Gmres => "gmres",
            SolverKind::Pgmres => "pgmres",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PrecondKind {
    None,
    Jacobi,
    Ic,
    Ilu,
}

impl PrecondKind {
    pub fn name(self) -> &'static str {
        match self {
            PrecondKind::None => "none",
            PrecondKind::Jacobi => "jacobi",
            PrecondKind::Ic => "ic",
            PrecondKind::Ilu => "ilu",
        }
    }
}

/// One point of a benchmark sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub geometry: Geometry,
    pub kernel: KernelKind,
    pub kappa: f64,
    pub order: usize,
    pub eta: f64,
    pub leaf_size: usize,
    pub m: usize,
    pub eps_slv: f64,
    pub tau: f64,
    pub solver: SolverKind,
    pub precond: PrecondKind,
    pub restart: usize,
    /// `0` means all available cores.
    pub threads: usize,
    pub seed: u64,
    pub verify: bool,
    pub max_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 512,
            geometry: Geometry::Sphere,
            kernel: KernelKind::Laplace,
            kappa: 1.0,
            order: 3,
            eta: 2.0,
            leaf_size: 32,
            m: 1,
            eps_slv: 1e-6,
            tau: 1e-2,
            solver: SolverKind::Pcg,
            precond: PrecondKind::Ic,
            restart: 30,
            threads: 0,
            seed: 42,
            verify: false,
            max_n: DEFAULT_MAX_N,
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Failed(#[from] H2Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl BenchError {
    pub fn exit_code(&self) -> u8 {
        match self {
            BenchError::Invalid(_) => 2,
            BenchError::Failed(_) | BenchError::Verification(_) => 1,
        }
    }
}

pub type BenchResult<T> = std::result::Result<T, BenchError>;

fn invalid<T>(msg: impl Into<String>) -> BenchResult<T> {
    Err(BenchError::Invalid(msg.into()))
}

impl RunConfig {
    /// Checks the construction parameters shared by every subcommand.
    pub fn validate(&self) -> BenchResult<()> {
        if self.n == 0 {
            return invalid("n must be >= 1");
        }
        if self.n > self.max_n {
            return invalid(format!("n = {} exceeds --max-n {}", self.n, self.max_n));
        }
        if self.order == 0 {
            return invalid("order must be >= 1");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return invalid(format!("eta must be positive, got {}", self.eta));
        }
        if self.leaf_size == 0 {
            return invalid("leaf-size must be >= 1");
        }
        if self.m == 0 {
            return invalid("m must be >= 1");
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return invalid(format!("kappa must be non-negative, got {}", self.kappa));
        }
        Ok(())
    }

    /// Additional checks for `solve`.
    pub fn validate_solve(&self) -> BenchResult<()> {
        self.validate()?;
        if !(self.eps_slv > 0.0 && self.eps_slv < 1.0) {
            return invalid(format!("eps-slv must lie in (0, 1), got {}", self.eps_slv));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return invalid(format!("tau must be non-negative, got {}", self.tau));
        }
        if self.restart == 0 {
            return invalid("restart must be >= 1");
        }
        let cg_family = matches!(self.solver, SolverKind::Cg | SolverKind::Pcg);
        if cg_family && self.kernel == KernelKind::Helmholtz {
            return invalid("cg and pcg need a Hermitian positive definite operator; use gmres or pgmres for helmholtz");
        }
        if matches!(self.solver, SolverKind::Cg | SolverKind::Gmres) && self.precond != PrecondKind::None {
            return invalid(format!("{} takes no preconditioner; use p{}", self.solver.name(), self.solver.name()));
        }
        if self.precond == PrecondKind::Ic && self.kernel == KernelKind::Helmholtz {
            return invalid("ic needs a Hermitian positive definite operator; use ilu for helmholtz");
        }
        if matches!(self.precond, PrecondKind::Ic | PrecondKind::Ilu) && self.n > DENSE_MAX_N {
            return invalid(format!("{} factors the dense operator and is limited to n <= {DENSE_MAX_N}", self.precond.name()));
        }
        Ok(())
    }

    pub fn params(&self) -> H2Params {
        H2Params { leaf_size: self.leaf_size, eta: self.eta, order: self.order }
    }

    pub fn cloud(&self) -> BenchResult<PointCloud> {
        match self.geometry {
            Geometry::Sphere => Ok(fibonacci_sphere(self.n, 1.0)?),
        }
    }
}

/// A built operator in the scalar field its kernel requires.
pub enum Operator {
    Real(H2Matrix<f64>),
    Complex(H2Matrix<Complex64>),
}

pub struct Built {
    pub operator: Operator,
    pub cloud: PointCloud,
    pub t_build: f64,
}

/// Geometry, trees and H²-matrix for `cfg`.
pub fn build_operator(cfg: &RunConfig) -> BenchResult<Built> {
    cfg.validate()?;
    let cloud = cfg.cloud()?;
    let start = Instant::now();
    let operator = match cfg.kernel {
        KernelKind::Laplace => Operator::Real(H2Matrix::build(&Laplace3d, &cloud, cfg.params())?),
        KernelKind::Helmholtz => {
            Operator::Complex(H2Matrix::build(&Helmholtz3d { kappa: cfg.kappa }, &cloud, cfg.params())?)
        }
    };
    Ok(Built { operator, cloud, t_build: start.elapsed().as_secs_f64() })
}

/// Scalars drawn uniformly from `[-1, 1]` (both parts for complex values).
pub trait SampleScalar: Scalar {
    fn sample(rng: &mut ChaCha8Rng) -> Self;
}

impl SampleScalar for f64 {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        rng.random_range(-1.0..=1.0)
    }
}

impl SampleScalar for Complex64 {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Complex64::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
    }
}

/// Seeded random `n x m` block; column `j` comes from stream `j` so it does
/// not depend on `m`.
pub fn random_block<T: SampleScalar>(n: usize, m: usize, seed: u64) -> MultiVector<T> {
    let columns: Vec<Vec<T>> = (0..m)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            (0..n).map(|_| T::sample(&mut rng)).collect()
        })
        .collect();
    DenseMatrix::from_columns(n, &columns)
}

/// Median wall time of `reps` runs of `f` after one warmup run.
pub fn median_time<E>(reps: usize, mut f: impl FnMut() -> Result<(), E>) -> Result<f64, E> {
    f()?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

/// First 16 hex digits of the SHA-256 of the real and imaginary parts.
pub fn output_hash<T: Scalar>(values: &[T]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.re().to_le_bytes());
        h.update(v.im().to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// A row of one of the CSV tables.
pub trait CsvRecord {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

/// Plain decimals for moderate magnitudes, scientific notation otherwise.
fn f(v: f64) -> String {
    if v != 0.0 && v.is_finite() && !(1e-3..1e7).contains(&v.abs()) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

fn s(v: impl Display) -> String {
    v.to_string()
}

/// Writes `rows` (with header) to `out`.
pub fn write_csv<R: CsvRecord, W: Write>(out: W, rows: &[R]) -> Result<(), H2Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(R::HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Appends `rows` to the file at `path`, writing the header only into an empty file.
pub fn append_csv<R: CsvRecord>(path: &Path, rows: &[R]) -> Result<(), H2Error> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let empty = file.metadata()?.len() == 0;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if empty {
        w.write_record(R::HEADER)?;
    }
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildRecord {
    pub n: usize,
    pub kernel: KernelKind,
    pub kappa: f64,
    pub order: usize,
    pub k: usize,
    pub eta: f64,
    pub leaf_size: usize,
    pub depth: usize,
    pub n_adm: usize,
    pub n_inadm: usize,
    pub csp: usize,
    pub mem_bytes: usize,
    pub mem_dense_bytes: usize,
    pub compression_ratio: f64,
    pub t_build: f64,
    pub rel_frobenius_error: Option<f64>,
}

impl CsvRecord for BuildRecord {
    const HEADER: &'static [&'static str] = &[
        "n", "kernel", "kappa", "order", "k", "eta", "leaf_size", "depth", "n_adm", "n_inadm", "csp",
        "mem_bytes", "mem_dense_bytes", "compression_ratio", "t_build", "rel_frobenius_error",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            s(self.n), s(self.kernel.name()), f(self.kappa), s(self.order), s(self.k), f(self.eta),
            s(self.leaf_size), s(self.depth), s(self.n_adm), s(self.n_inadm), s(self.csp), s(self.mem_bytes),
            s(self.mem_dense_bytes), f(self.compression_ratio), f(self.t_build), opt(self.rel_frobenius_error),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatvecRecord {
    pub n: usize,
    pub kernel: KernelKind,
    pub order: usize,
    pub eta: f64,
    pub leaf_size: usize,
    pub threads: usize,
    pub mem_bytes: usize,
    pub t_matvec: f64,
    pub effective_gbps: f64,
    pub output_hash: String,
    pub oracle_error: Option<f64>,
}

impl CsvRecord for MatvecRecord {
    const HEADER: &'static [&'static str] = &[
        "n", "kernel", "order", "eta", "leaf_size", "threads", "mem_bytes", "t_matvec", "effective_GBps",
        "output_hash", "oracle_error",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            s(self.n), s(self.kernel.name()), s(self.order), f(self.eta), s(self.leaf_size), s(self.threads),
            s(self.mem_bytes), f(self.t_matvec), f(self.effective_gbps), self.output_hash.clone(),
            opt(self.oracle_error),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatmatRecord {
    pub n: usize,
    pub kernel: KernelKind,
    pub order: usize,
    pub eta: f64,
    pub leaf_size: usize,
    pub threads: usize,
    pub m: usize,
    pub mem_bytes: usize,
    pub t_matvec: f64,
    pub t_matmat: f64,
    pub t_mfold: f64,
    pub speedup_block_vs_mfold: f64,
    pub effective_gbps_model: f64,
    pub output_hash: String,
    pub max_column_rel_diff: Option<f64>,
    pub oracle_error: Option<f64>,
}

impl CsvRecord for MatmatRecord {
    const HEADER: &'static [&'static str] = &[
        "n", "kernel", "order", "eta", "leaf_size", "threads", "m", "mem_bytes", "t_matvec", "t_matmat", "t_mfold",
        "speedup_block_vs_mfold", "effective_GBps_model", "output_hash", "max_column_rel_diff", "oracle_error",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            s(self.n), s(self.kernel.name()), s(self.order), f(self.eta), s(self.leaf_size), s(self.threads),
            s(self.m), s(self.mem_bytes), f(self.t_matvec), f(self.t_matmat), f(self.t_mfold),
            f(self.speedup_block_vs_mfold), f(self.effective_gbps_model), self.output_hash.clone(),
            opt(self.max_column_rel_diff), opt(self.oracle_error),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveRecord {
    pub solver: SolverKind,
    pub kernel: KernelKind,
    pub kappa: f64,
    pub n: usize,
    pub order: usize,
    pub eta: f64,
    pub leaf_size: usize,
    pub threads: usize,
    pub m: usize,
    pub eps_slv: f64,
    pub precond: PrecondKind,
    pub tau: f64,
    pub restart: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged_count: usize,
    pub t_factor: f64,
    pub t_total: f64,
    pub t_addmul: f64,
    pub t_precond: f64,
    pub t_core: f64,
    pub max_rel_error: f64,
    pub max_true_residual: f64,
}

impl SolveRecord {
    pub fn all_converged(&self) -> bool {
        self.converged_count == self.m
    }
}

impl CsvRecord for SolveRecord {
    const HEADER: &'static [&'static str] = &[
        "solver", "kernel", "kappa", "n", "order", "eta", "leaf_size", "threads", "m", "eps_slv", "precond", "tau",
        "restart", "seed", "iterations", "converged_count", "t_factor", "t_total", "t_addmul", "t_precond",
        "t_core", "max_rel_error", "max_true_residual",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            s(self.solver.name()), s(self.kernel.name()), f(self.kappa), s(self.n), s(self.order), f(self.eta),
            s(self.leaf_size), s(self.threads), s(self.m), f(self.eps_slv), s(self.precond.name()), f(self.tau),
            s(self.restart), s(self.seed), s(self.iterations), s(self.converged_count), f(self.t_factor),
            f(self.t_total), f(self.t_addmul), f(self.t_precond), f(self.t_core), f(self.max_rel_error),
            f(self.max_true_residual),
        ]
    }
}

/// Structure statistics, plus the error against the exact kernel matrix when
/// `verify` is set and `n <= DENSE_MAX_N`.
pub fn cmd_build(cfg: &RunConfig) -> BenchResult<BuildRecord> {
    let built = build_operator(cfg)?;
    let rel_frobenius_error = if cfg.verify && cfg.n <= DENSE_MAX_N {
        Some(match &built.operator {
            Operator::Real(h2) => relative_frobenius_error(&h2.densify(), &dense_kernel_matrix(&Laplace3d, &built.cloud)),
            Operator::Complex(h2) => relative_frobenius_error(
                &h2.densify(),
                &dense_kernel_matrix(&Helmholtz3d { kappa: cfg.kappa }, &built.cloud),
            ),
        })
    } else {
        None
    };
    let st = match &built.operator {
        Operator::Real(h2) => h2.stats(),
        Operator::Complex(h2) => h2.stats(),
    };
    Ok(BuildRecord {
        n: st.n,
        kernel: cfg.kernel,
        kappa: cfg.kappa,
        order: st.order,
        k: st.rank,
        eta: st.eta,
        leaf_size: st.leaf_size,
        depth: st.depth,
        n_adm: st.n_admissible,
        n_inadm: st.n_inadmissible,
        csp: st.sparsity_constant,
        mem_bytes: st.mem_bytes,
        mem_dense_bytes: st.mem_dense_bytes,
        compression_ratio: st.compression_ratio(),
        t_build: built.t_build,
        rel_frobenius_error,
    })
}

/// `|Y - G X|_F / (|G|_F |X|_F)` against the densified operator.
fn oracle_error<T: Scalar>(h2: &H2Matrix<T>, x: &MultiVector<T>, y: &MultiVector<T>) -> BenchResult<f64> {
    let g = h2.densify();
    let reference = g.matmul(x)?;
    let diff: f64 = y.as_slice().iter().zip(reference.as_slice()).map(|(a, b)| (*a - *b).abs2()).sum();
    Ok(diff.sqrt() / (g.frobenius_norm() * x.frobenius_norm()))
}

fn check_oracle(err: f64) -> BenchResult<()> {
    if err > ORACLE_TOL {
        return Err(BenchError::Verification(format!("dense oracle error {err:e} exceeds {ORACLE_TOL:e}")));
    }
    Ok(())
}

fn check_hashes(hashes: &[String], verify: bool) -> BenchResult<()> {
    if hashes.windows(2).all(|w| w[0] == w[1]) {
        return Ok(());
    }
    if verify {
        return Err(BenchError::Verification("output differs between repetitions".into()));
    }
    log::warn!("output hash differs between repetitions");
    Ok(())
}

fn bytes_of<T>(count: usize) -> usize {
    count * std::mem::size_of::<T>()
}

/// Times one matrix–vector product per repetition.
pub fn time_matvec<T: SampleScalar>(h2: &H2Matrix<T>, cfg: &RunConfig) -> BenchResult<MatvecRecord> {
    let n = h2.nrows();
    let threads = resolve_threads(cfg.threads);
    let x = random_block::<T>(n, 1, cfg.seed);
    let mut y = DenseMatrix::zeros(n, 1);
    let mut ws = Workspace::new(h2);
    let mut hashes = Vec::new();
    let t_matvec = median_time(REPETITIONS, || {
        y.fill_zero();
        addeval_list_with(&mut ws, T::one(), h2, &x, &mut y, threads)?;
        hashes.push(output_hash(y.as_slice()));
        Ok::<_, BenchError>(())
    })?;
    check_hashes(&hashes, cfg.verify)?;
    let oracle = if cfg.verify && n <= VERIFY_MAX_N {
        let err = oracle_error(h2, &x, &y)?;
        check_oracle(err)?;
        Some(err)
    } else {
        None
    };
    let mem_bytes = h2.memory_bytes();
    let moved = mem_bytes + bytes_of::<T>(n) + 2 * bytes_of::<T>(n);
    Ok(MatvecRecord {
        n,
        kernel: cfg.kernel,
        order: h2.order(),
        eta: h2.block_tree().eta(),
        leaf_size: h2.row_tree().leaf_size(),
        threads,
        mem_bytes,
        t_matvec,
        effective_gbps: moved as f64 / t_matvec / 1e9,
        output_hash: hashes[0].clone(),
        oracle_error: oracle,
    })
}

/// Times one blocked product with `m` columns against `m` single products.
pub fn time_matmat<T: SampleScalar>(h2: &H2Matrix<T>, cfg: &RunConfig) -> BenchResult<MatmatRecord> {
    let (n, m) = (h2.nrows(), cfg.m);
    let threads = resolve_threads(cfg.threads);
    let x = random_block::<T>(n, m, cfg.seed);
    let mut ws = Workspace::new(h2);

    let x1 = DenseMatrix::from_columns(n, &[x.col(0).to_vec()]);
    let mut y1 = DenseMatrix::zeros(n, 1);
    let t_matvec = median_time(REPETITIONS, || {
        y1.fill_zero();
        addeval_list_with(&mut ws, T::one(), h2, &x1, &mut y1, threads)
    })?;

    let mut y = DenseMatrix::zeros(n, m);
    let mut hashes = Vec::new();
    let t_matmat = median_time(REPETITIONS, || {
        y.fill_zero();
        addeval_block_with(&mut ws, T::one(), h2, &x, &mut y, threads)?;
        hashes.push(output_hash(y.as_slice()));
        Ok::<_, BenchError>(())
    })?;
    check_hashes(&hashes, cfg.verify)?;

    let (mut column_diff, mut oracle) = (None, None);
    if cfg.verify {
        let mut single = DenseMatrix::zeros(n, m);
        addeval_list_with(&mut ws, T::one(), h2, &x, &mut single, threads)?;
        let worst = (0..m)
            .map(|j| {
                let d: f64 = y.col(j).iter().zip(single.col(j)).map(|(a, b)| (*a - *b).abs2()).sum();
                let scale = norm2(single.col(j));
                if scale > 0.0 { d.sqrt() / scale } else { d.sqrt() }
            })
            .fold(0.0, f64::max);
        if worst > COLUMN_TOL {
            return Err(BenchError::Verification(format!(
                "blocked product differs from single products by {worst:e} > {COLUMN_TOL:e}"
            )));
        }
        column_diff = Some(worst);
        if n <= VERIFY_MAX_N {
            let err = oracle_error(h2, &x, &y)?;
            check_oracle(err)?;
            oracle = Some(err);
        }
    }

    let mem_bytes = h2.memory_bytes();
    let moved = m * mem_bytes + bytes_of::<T>(n * m) + 2 * bytes_of::<T>(n * m);
    let t_mfold = m as f64 * t_matvec;
    Ok(MatmatRecord {
        n,
        kernel: cfg.kernel,
        order: h2.order(),
        eta: h2.block_tree().eta(),
        leaf_size: h2.row_tree().leaf_size(),
        threads,
        m,
        mem_bytes,
        t_matvec,
        t_matmat,
        t_mfold,
        speedup_block_vs_mfold: t_mfold / t_matmat,
        effective_gbps_model: moved as f64 / t_matmat / 1e9,
        output_hash: hashes[0].clone(),
        max_column_rel_diff: column_diff,
        oracle_error: oracle,
    })
}

pub fn cmd_matvec(built: &Built, cfg: &RunConfig) -> BenchResult<MatvecRecord> {
    cfg.validate()?;
    match &built.operator {
        Operator::Real(h2) => time_matvec(h2, cfg),
        Operator::Complex(h2) => time_matvec(h2, cfg),
    }
}

pub fn cmd_matmat(built: &Built, cfg: &RunConfig) -> BenchResult<MatmatRecord> {
    cfg.validate()?;
    match &built.operator {
        Operator::Real(h2) => time_matmat(h2, cfg),
        Operator::Complex(h2) => time_matmat(h2, cfg),
    }
}

fn preconditioner<T: Scalar>(h2: &H2Matrix<T>, cfg: &RunConfig) -> BenchResult<Preconditioner<T>> {
    Ok(match cfg.precond {
        PrecondKind::None => Preconditioner::Identity(h2.nrows()),
        PrecondKind::Jacobi => Preconditioner::BlockJacobi(block_jacobi_from_nearfield(h2)?),
        PrecondKind::Ic => Preconditioner::Factored(ic_drop_factor(&h2.densify(), cfg.tau)?),
        PrecondKind::Ilu => Preconditioner::Factored(ilu_drop_factor(&h2.densify(), cfg.tau)?),
    })
}

/// Solves `A X = A X_true` for a seeded random `X_true`.
pub fn solve_system<T: SampleScalar>(h2: &H2Matrix<T>, cfg: &RunConfig) -> BenchResult<SolveRecord> {
    let (n, m) = (h2.nrows(), cfg.m);
    let threads = resolve_threads(cfg.threads);
    let op = H2Operator::new(h2, threads, ProductMode::Blocked);
    let x_true = random_block::<T>(n, m, cfg.seed);
    let mut b = DenseMatrix::zeros(n, m);
    op.apply(T::one(), &x_true, &mut b)?;

    let start = Instant::now();
    let precond = preconditioner(h2, cfg)?;
    let t_factor = start.elapsed().as_secs_f64();

    let opts = SolveOptions { eps_slv: cfg.eps_slv, restart: cfg.restart, threads, ..Default::default() };
    let x0 = DenseMatrix::zeros(n, m);
    let (x, report) = match cfg.solver {
        SolverKind::Cg | SolverKind::Pcg => block_pcg(&op, &precond, &b, &x0, &opts)?,
        SolverKind::Gmres | SolverKind::Pgmres => block_pgmres(&op, &precond, &b, &x0, &opts)?,
    };

    let max_rel_error = (0..m)
        .map(|j| {
            let d: f64 = x.col(j).iter().zip(x_true.col(j)).map(|(a, b)| (*a - *b).abs2()).sum();
            d.sqrt() / norm2(x_true.col(j))
        })
        .fold(0.0, f64::max);

    if cfg.verify && n <= VERIFY_MAX_N {
        let mut r = b.clone();
        crate::dense::gemm_update(&mut r, &h2.densify(), &x, T::from_real(-1.0), crate::dense::Op::NoTrans)?;
        for (j, c) in report.columns.iter().enumerate() {
            let res = norm2(r.col(j)) / norm2(b.col(j));
            if c.converged() && res > 10.0 * cfg.eps_slv {
                return Err(BenchError::Verification(format!(
                    "column {j}: dense residual {res:e} exceeds 10 * eps-slv"
                )));
            }
        }
    }

    Ok(SolveRecord {
        solver: cfg.solver,
        kernel: cfg.kernel,
        kappa: cfg.kappa,
        n,
        order: h2.order(),
        eta: h2.block_tree().eta(),
        leaf_size: h2.row_tree().leaf_size(),
        threads,
        m,
        eps_slv: cfg.eps_slv,
        precond: cfg.precond,
        tau: cfg.tau,
        restart: cfg.restart,
        seed: cfg.seed,
        iterations: report.iterations,
        converged_count: report.converged_count(),
        t_factor,
        t_total: report.t_total,
        t_addmul: report.t_addmul,
        t_precond: report.t_precond,
        t_core: report.t_core,
        max_rel_error,
        max_true_residual: report.max_true_residual(),
    })
}

pub fn cmd_solve(built: &Built, cfg: &RunConfig) -> BenchResult<SolveRecord> {
    cfg.validate_solve()?;
    match &built.operator {
        Operator::Real(h2) => solve_system(h2, cfg),
        Operator::Complex(h2) => solve_system(h2, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig { n: 300, threads: 2, ..Default::default() }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        assert!(small().validate().is_ok());
        for bad in [
            RunConfig { n: 0, ..small() },
            RunConfig { n: 70000, ..small() },
            RunConfig { order: 0, ..small() },
            RunConfig { eta: 0.0, ..small() },
            RunConfig { leaf_size: 0, ..small() },
            RunConfig { m: 0, ..small() },
        ] {
            assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
        }
        let helm = RunConfig { kernel: KernelKind::Helmholtz, ..small() };
        assert!(RunConfig { solver: SolverKind::Cg, precond: PrecondKind::None, ..helm.clone() }.validate_solve().is_err());
        assert!(RunConfig { solver: SolverKind::Pgmres, precond: PrecondKind::Ic, ..helm.clone() }.validate_solve().is_err());
        assert!(RunConfig { solver: SolverKind::Pgmres, precond: PrecondKind::Ilu, ..helm }.validate_solve().is_ok());
        assert!(RunConfig { solver: SolverKind::Gmres, precond: PrecondKind::Jacobi, ..small() }.validate_solve().is_err());
        assert!(RunConfig { n: 5000, precond: PrecondKind::Ic, ..small() }.validate_solve().is_err());
        assert!(RunConfig { n: 5000, precond: PrecondKind::Jacobi, ..small() }.validate_solve().is_ok());
    }

    #[test]
    fn random_columns_do_not_depend_on_width() {
        let a = random_block::<f64>(50, 2, 7);
        let b = random_block::<f64>(50, 5, 7);
        assert_eq!(a.col(1), b.col(1));
        assert_ne!(a.col(0), a.col(1));
        assert!(a.as_slice().iter().all(|v| v.abs() <= 1.0));
        assert_ne!(random_block::<f64>(50, 1, 8).col(0), a.col(0));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let h = output_hash(&[1.0, 2.0]);
        assert_eq!(h.len(), 16);
        assert_eq!(h, output_hash(&[1.0, 2.0]));
        assert_ne!(h, output_hash(&[1.0, f64::from_bits(2.0f64.to_bits() + 1)]));
        assert_ne!(output_hash(&[Complex64::new(1.0, 0.0)]), output_hash(&[Complex64::new(1.0, 1e-300)]));
    }

    #[test]
    fn median_discards_warmup() {
        let mut calls = 0;
        median_time::<()>(5, || {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 6);
    }

    #[test]
    fn records_match_header_width() {
        let built = build_operator(&small()).unwrap();
        let b = cmd_build(&RunConfig { verify: true, ..small() }).unwrap();
        assert_eq!(b.fields().len(), BuildRecord::HEADER.len());
        assert!(b.rel_frobenius_error.unwrap() < 1e-1);
        let mv = cmd_matvec(&built, &RunConfig { verify: true, ..small() }).unwrap();
        assert_eq!(mv.fields().len(), MatvecRecord::HEADER.len());
        assert!(mv.oracle_error.unwrap() <= ORACLE_TOL);
        let mm = cmd_matmat(&built, &RunConfig { verify: true, m: 3, ..small() }).unwrap();
        assert_eq!(mm.fields().len(), MatmatRecord::HEADER.len());
        assert_eq!(mm.max_column_rel_diff, Some(0.0));
        let sv = cmd_solve(&built, &RunConfig { verify: true, m: 2, ..small() }).unwrap();
        assert_eq!(sv.fields().len(), SolveRecord::HEADER.len());
        assert!(sv.all_converged());
    }

    #[test]
    fn solve_is_reproducible() {
        let cfg = RunConfig { kernel: KernelKind::Helmholtz, solver: SolverKind::Pgmres, precond: PrecondKind::Ilu, m: 3, ..small() };
        let built = build_operator(&cfg).unwrap();
        let a = cmd_solve(&built, &cfg).unwrap();
        let b = cmd_solve(&built, &cfg).unwrap();
        assert_eq!((a.iterations, a.max_rel_error, a.max_true_residual), (b.iterations, b.max_rel_error, b.max_true_residual));
        assert!(a.all_converged());
        assert!(a.max_rel_error < 1e-3);
    }

    #[test]
    fn append_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let rec = BuildRecord {
            n: 1, kernel: KernelKind::Laplace, kappa: 1.0, order: 1, k: 1, eta: 2.0, leaf_size: 1, depth: 0,
            n_adm: 0, n_inadm: 1, csp: 1, mem_bytes: 8, mem_dense_bytes: 8, compression_ratio: 1.0, t_build: 0.0,
            rel_frobenius_error: None,
        };
        append_csv(&path, &[rec.clone()]).unwrap();
        append_csv(&path, &[rec]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], BuildRecord::HEADER.join(","));
        assert!(lines[1].ends_with(','));
        assert_eq!(f(1e-7), "1e-7");
        assert_eq!(f(0.25), "0.25");
        assert_eq!(f(0.0), "0");
    }
}
