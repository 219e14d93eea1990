//! Parallel H²-matrix products and block Krylov solvers for boundary-integral
//! kernels on point clouds.
//!
//! The pipeline is: [`geometry`] point cloud, [`cluster::ClusterTree`],
//! [`block_tree::BlockTree`], [`h2matrix::H2Matrix`] assembly by tensor
//! Chebyshev interpolation, products in [`apply`], and the solvers in
//! [`krylov`] with optional [`precond`] preconditioners.

pub mod apply;
pub mod basis;
pub mod bench;
pub mod block_tree;
pub mod cluster;
pub mod dense;
pub mod error;
pub mod geometry;
pub mod h2matrix;
pub mod kernel;
pub mod krylov;
pub mod parallel;
pub mod precond;
pub mod scalar;

pub use apply::{addeval_block, addeval_list, addeval_recursive, Workspace};
pub use block_tree::{BlockTree, RowLists};
pub use cluster::ClusterTree;
pub use dense::{DenseMatrix, MultiVector};
pub use error::{H2Error, Result};
pub use geometry::{fibonacci_sphere, PointCloud};
pub use h2matrix::{H2Matrix, H2Params};
pub use kernel::{Helmholtz3d, Kernel, Laplace3d};
pub use scalar::Scalar;
