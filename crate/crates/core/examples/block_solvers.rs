//! Many right-hand sides with one matrix: block CG for the Laplace kernel and
//! block GMRES for the Helmholtz kernel.

use h2krylov::bench::random_block;
use h2krylov::krylov::{block_pcg, block_pgmres, H2Operator, LinearOperator, ProductMode, SolveOptions};
use h2krylov::precond::Preconditioner;
use h2krylov::{fibonacci_sphere, DenseMatrix, H2Matrix, H2Params, Helmholtz3d, Laplace3d};
use num_complex::Complex64;

fn main() -> h2krylov::Result<()> {
    let (n, m) = (2048, 16);
    let cloud = fibonacci_sphere(n, 1.0)?;
    let opts = SolveOptions { eps_slv: 1e-8, ..Default::default() };

    let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, H2Params::default())?;
    let op = H2Operator::new(&h2, 0, ProductMode::Blocked);
    let x_true = random_block::<f64>(n, m, 3);
    let mut b = DenseMatrix::zeros(n, m);
    op.apply(1.0, &x_true, &mut b)?;
    let (x, report) = block_pcg(&op, &Preconditioner::Identity(n), &b, &DenseMatrix::zeros(n, m), &opts)?;
    println!(
        "block cg: {} iterations, {}/{m} converged, error {:.1e}, {:.1} ms",
        report.iterations,
        report.converged_count(),
        x.max_abs_diff(&x_true),
        report.t_total * 1e3
    );

    let h2 = H2Matrix::<Complex64>::build(&Helmholtz3d { kappa: 2.0 }, &cloud, H2Params::default())?;
    let op = H2Operator::new(&h2, 0, ProductMode::Blocked);
    let x_true = random_block::<Complex64>(n, m, 4);
    let mut b = DenseMatrix::zeros(n, m);
    op.apply(Complex64::new(1.0, 0.0), &x_true, &mut b)?;
    let (x, report) = block_pgmres(&op, &Preconditioner::Identity(n), &b, &DenseMatrix::zeros(n, m), &opts)?;
    println!(
        "block gmres: {} iterations, {}/{m} converged, error {:.1e}, {:.1} ms",
        report.iterations,
        report.converged_count(),
        x.max_abs_diff(&x_true),
        report.t_total * 1e3
    );
    Ok(())
}
