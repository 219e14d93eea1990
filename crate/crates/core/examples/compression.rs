//! Compression accuracy and storage against the exact kernel matrix as the
//! interpolation order grows.

use h2krylov::h2matrix::{dense_kernel_matrix, relative_frobenius_error};
use h2krylov::{fibonacci_sphere, H2Matrix, H2Params, Helmholtz3d, Laplace3d};
use num_complex::Complex64;

fn main() -> h2krylov::Result<()> {
    let cloud = fibonacci_sphere(1024, 1.0)?;
    let exact = dense_kernel_matrix::<f64, _>(&Laplace3d, &cloud);
    println!("laplace, n = 1024");
    for order in 2..=5 {
        let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, H2Params { order, ..Default::default() })?;
        let st = h2.stats();
        println!(
            "  order {order}  rank {:>3}  error {:.2e}  storage {:.3} of dense",
            st.rank,
            relative_frobenius_error(&h2.densify(), &exact),
            st.compression_ratio()
        );
    }

    let kernel = Helmholtz3d { kappa: 4.0 };
    let exact = dense_kernel_matrix::<Complex64, _>(&kernel, &cloud);
    println!("helmholtz kappa = 4, n = 1024");
    for order in [3, 4] {
        let h2 = H2Matrix::<Complex64>::build(&kernel, &cloud, H2Params { order, ..Default::default() })?;
        println!("  order {order}  error {:.2e}", relative_frobenius_error(&h2.densify(), &exact));
    }
    Ok(())
}
