//! Parallel matrix-vector products: timings per thread count and a check that
//! the result does not depend on the number of threads.

use std::time::Instant;

use h2krylov::{addeval_list, fibonacci_sphere, DenseMatrix, H2Matrix, H2Params, Laplace3d};

fn main() -> h2krylov::Result<()> {
    let n = 8192;
    let cloud = fibonacci_sphere(n, 1.0)?;
    let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, H2Params::default())?;
    let x = DenseMatrix::from_fn(n, 1, |i, _| ((i * 37) % 101) as f64 / 50.0 - 1.0);

    let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
    let mut reference: Option<DenseMatrix<f64>> = None;
    let mut counts = vec![1, 2, 4, cores];
    counts.sort_unstable();
    counts.dedup();
    for threads in counts {
        let mut y = DenseMatrix::zeros(n, 1);
        let start = Instant::now();
        addeval_list(1.0, &h2, &x, &mut y, threads)?;
        let t = start.elapsed().as_secs_f64();
        let same = reference.get_or_insert_with(|| y.clone()) == &y;
        println!("threads {threads:>2}: {:.3} ms  identical to 1 thread: {same}", t * 1e3);
    }
    Ok(())
}
