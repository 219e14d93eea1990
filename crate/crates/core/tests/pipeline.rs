use h2krylov::bench::{random_block, solve_system, KernelKind, PrecondKind, RunConfig, SolverKind};
use h2krylov::h2matrix::{dense_kernel_matrix, relative_frobenius_error};
use h2krylov::krylov::{block_pcg, cg_solve, gmres_solve, H2Operator, LinearOperator, ProductMode, SolveOptions};
use h2krylov::precond::{ic_drop_factor, Preconditioner};
use h2krylov::{
    addeval_block, addeval_recursive, fibonacci_sphere, DenseMatrix, H2Matrix, H2Params, Helmholtz3d, Laplace3d,
    PointCloud,
};
use num_complex::Complex64;

#[test]
fn point_cloud_file_round_trip_gives_same_operator() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.csv");
    let cloud = fibonacci_sphere(400, 2.0).unwrap();
    cloud.save(&path).unwrap();
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("x,y,z\n"));
    let loaded = PointCloud::load(&path).unwrap();
    let a = H2Matrix::<f64>::build(&Laplace3d, &cloud, H2Params::default()).unwrap();
    let b = H2Matrix::<f64>::build(&Laplace3d, &loaded, H2Params::default()).unwrap();
    assert_eq!(a.densify(), b.densify());
}

#[test]
fn recursive_and_blocked_products_agree_with_the_kernel() {
    let cloud = fibonacci_sphere(700, 1.0).unwrap();
    let kernel = Helmholtz3d { kappa: 2.0 };
    let h2 = H2Matrix::<Complex64>::build(&kernel, &cloud, H2Params { order: 4, ..Default::default() }).unwrap();
    let exact = dense_kernel_matrix::<Complex64, _>(&kernel, &cloud);
    assert!(relative_frobenius_error(&h2.densify(), &exact) < 1e-3);

    let x = random_block::<Complex64>(700, 5, 2);
    let alpha = Complex64::new(0.5, -2.0);
    let mut seq = DenseMatrix::zeros(700, 5);
    addeval_recursive(alpha, &h2, &x, &mut seq).unwrap();
    let mut par = DenseMatrix::zeros(700, 5);
    addeval_block(alpha, &h2, &x, &mut par, 3).unwrap();
    assert!(seq.max_abs_diff(&par) <= 1e-12 * seq.max_abs());

    let mut reference = exact.matmul(&x).unwrap();
    reference.as_mut_slice().iter_mut().for_each(|v| *v *= alpha);
    assert!(par.max_abs_diff(&reference) <= 1e-3 * reference.max_abs());
}

#[test]
fn single_system_entry_points_match_the_blocked_solvers() {
    let cloud = fibonacci_sphere(512, 1.0).unwrap();
    let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, H2Params::default()).unwrap();
    let op = H2Operator::new(&h2, 2, ProductMode::Blocked);
    let x_true = random_block::<f64>(512, 1, 9);
    let mut b = DenseMatrix::zeros(512, 1);
    op.apply(1.0, &x_true, &mut b).unwrap();
    let opts = SolveOptions { eps_slv: 1e-9, ..Default::default() };
    let zeros = vec![0.0; 512];

    let (x_cg, r_cg) = cg_solve(&op, b.col(0), &zeros, &opts).unwrap();
    let (x_blk, r_blk) = block_pcg(&op, &Preconditioner::Identity(512), &b, &DenseMatrix::zeros(512, 1), &opts).unwrap();
    assert_eq!(x_cg, x_blk.col(0));
    assert_eq!(r_cg.iterations, r_blk.iterations);

    let ic = Preconditioner::Factored(ic_drop_factor(&h2.densify(), 1e-3).unwrap());
    let (x_gm, r_gm) = gmres_solve(&op, &ic, b.col(0), &zeros, &opts).unwrap();
    assert!(r_gm.all_converged());
    let err = x_gm.iter().zip(x_true.col(0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn seeded_solves_are_reproducible_across_thread_counts() {
    let base = RunConfig {
        n: 600,
        kernel: KernelKind::Helmholtz,
        solver: SolverKind::Pgmres,
        precond: PrecondKind::Jacobi,
        m: 5,
        restart: 7,
        ..Default::default()
    };
    let cloud = base.cloud().unwrap();
    let h2 = H2Matrix::<Complex64>::build(&Helmholtz3d { kappa: base.kappa }, &cloud, base.params()).unwrap();
    let one = solve_system(&h2, &RunConfig { threads: 1, ..base.clone() }).unwrap();
    let four = solve_system(&h2, &RunConfig { threads: 4, ..base }).unwrap();
    assert!(one.all_converged());
    assert_eq!(one.iterations, four.iterations);
    assert_eq!(one.max_rel_error.to_bits(), four.max_rel_error.to_bits());
    assert_eq!(one.max_true_residual.to_bits(), four.max_true_residual.to_bits());
}

#[test]
fn unconverged_solves_are_reported_not_raised() {
    let cfg = RunConfig { n: 400, solver: SolverKind::Pgmres, precond: PrecondKind::Jacobi, m: 3, restart: 1, ..Default::default() };
    let cloud = cfg.cloud().unwrap();
    let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, cfg.params()).unwrap();
    let op = H2Operator::new(&h2, 1, ProductMode::Blocked);
    let b = random_block::<f64>(400, 3, 1);
    let opts = SolveOptions { eps_slv: 1e-14, max_iter: 2, restart: 1, ..Default::default() };
    let p = Preconditioner::Identity(400);
    let (_, report) = h2krylov::krylov::block_pgmres(&op, &p, &b, &DenseMatrix::zeros(400, 3), &opts).unwrap();
    assert_eq!(report.converged_count(), 0);
    assert!(report.columns.iter().all(|c| c.iterations <= 2));
}
