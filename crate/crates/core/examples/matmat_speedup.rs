//! One blocked product with m columns against m single products.

use std::time::Instant;

use h2krylov::bench::random_block;
use h2krylov::{addeval_block, addeval_list, fibonacci_sphere, DenseMatrix, H2Matrix, H2Params, Laplace3d};

fn main() -> h2krylov::Result<()> {
    let n = 4096;
    let cloud = fibonacci_sphere(n, 1.0)?;
    let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, H2Params::default())?;
    for m in [1, 10, 50] {
        let x = random_block::<f64>(n, m, 1);
        let mut y_list = DenseMatrix::zeros(n, m);
        let start = Instant::now();
        addeval_list(1.0, &h2, &x, &mut y_list, 0)?;
        let t_list = start.elapsed().as_secs_f64();
        let mut y_block = DenseMatrix::zeros(n, m);
        let start = Instant::now();
        addeval_block(1.0, &h2, &x, &mut y_block, 0)?;
        let t_block = start.elapsed().as_secs_f64();
        println!(
            "m {m:>3}: m-fold {:.1} ms  blocked {:.1} ms  speedup {:.2}  max diff {:.1e}",
            t_list * 1e3,
            t_block * 1e3,
            t_list / t_block,
            y_list.max_abs_diff(&y_block)
        );
    }
    Ok(())
}
