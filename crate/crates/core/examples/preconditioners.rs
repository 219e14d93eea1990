//! Iteration counts of preconditioned CG as the drop tolerance shrinks.

use h2krylov::bench::random_block;
use h2krylov::krylov::{block_pcg, H2Operator, LinearOperator, ProductMode, SolveOptions};
use h2krylov::precond::{block_jacobi_from_nearfield, ic_drop_factor, Preconditioner};
use h2krylov::{fibonacci_sphere, DenseMatrix, H2Matrix, H2Params, Laplace3d};

fn main() -> h2krylov::Result<()> {
    let (n, m) = (1024, 8);
    let cloud = fibonacci_sphere(n, 1.0)?;
    let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, H2Params::default())?;
    let op = H2Operator::new(&h2, 0, ProductMode::Blocked);
    let mut b = DenseMatrix::zeros(n, m);
    op.apply(1.0, &random_block::<f64>(n, m, 5), &mut b)?;
    let x0 = DenseMatrix::zeros(n, m);
    let opts = SolveOptions { eps_slv: 1e-10, ..Default::default() };

    let run = |label: String, p: Preconditioner<f64>| -> h2krylov::Result<()> {
        let (_, r) = block_pcg(&op, &p, &b, &x0, &opts)?;
        println!("{label:<14} {:>3} iterations  {:.1} ms", r.iterations, r.t_total * 1e3);
        Ok(())
    };
    run("none".into(), Preconditioner::Identity(n))?;
    run("block jacobi".into(), Preconditioner::BlockJacobi(block_jacobi_from_nearfield(&h2)?))?;
    let dense = h2.densify();
    for tau in [1e-1, 1e-2, 1e-3, 1e-4, 0.0] {
        let f = ic_drop_factor(&dense, tau)?;
        let kept = f.stats().nnz_kept;
        run(format!("ic tau {tau:e}"), Preconditioner::Factored(f))?;
        println!("{:<14} {kept} entries kept", "");
    }
    Ok(())
}
