//! H²-matrix assembly by kernel interpolation, plus the dense oracle.

use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::ClusterBasis;
use crate::block_tree::{BlockKind, BlockTree, RowLists, DEFAULT_ETA};
use crate::cluster::{ClusterTree, DEFAULT_LEAF_SIZE};
use crate::dense::{gemm_update, DenseMatrix, Op};
use crate::error::{H2Error, Result};
use crate::geometry::PointCloud;
use crate::kernel::Kernel;
use crate::scalar::Scalar;

/// Construction parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct H2Params {
    pub leaf_size: usize,
    pub eta: f64,
    /// Chebyshev points per axis; the rank is `order^3`.
    pub order: usize,
}

impl Default for H2Params {
    fn default() -> Self {
        Self {
            leaf_size: DEFAULT_LEAF_SIZE,
            eta: DEFAULT_ETA,
            order: 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct H2Matrix<T> {
    row_tree: Arc<ClusterTree>,
    col_tree: Arc<ClusterTree>,
    block_tree: BlockTree,
    row_lists: Option<RowLists>,
    row_basis: Arc<ClusterBasis<T>>,
    col_basis: Arc<ClusterBasis<T>>,
    couplings: Vec<DenseMatrix<T>>,
    nearfield: Vec<DenseMatrix<T>>,
}

/// Row sums `sum_{j != i} |g(x_i, x_j)|`, used for the collocation diagonal.
fn offdiagonal_row_sums<T: Scalar, K: Kernel<T> + ?Sized>(kernel: &K, cloud: &PointCloud) -> Vec<f64> {
    let pts = cloud.points();
    (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for (j, pj) in pts.iter().enumerate() {
                if j != i {
                    s += kernel.evaluate(&pts[i], pj).abs();
                }
            }
            s
        })
        .collect()
}

/// Collocation diagonal `G_ii = sum_{j != i} |G_ij| + 1`.
pub fn diagonal_values<T: Scalar, K: Kernel<T> + ?Sized>(kernel: &K, cloud: &PointCloud) -> Vec<T> {
    offdiagonal_row_sums(kernel, cloud)
        .into_iter()
        .map(|s| T::from_real(s + 1.0))
        .collect()
}

/// The exact kernel matrix in original index order, diagonal rule applied.
pub fn dense_kernel_matrix<T: Scalar, K: Kernel<T> + ?Sized>(
    kernel: &K,
    cloud: &PointCloud,
) -> DenseMatrix<T> {
    let pts = cloud.points();
    let diag = diagonal_values(kernel, cloud);
    let n = pts.len();
    let mut g = DenseMatrix::zeros(n, n);
    g.as_mut_slice()
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(j, col)| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = if i == j { diag[i] } else { kernel.evaluate(&pts[i], &pts[j]) };
            }
        });
    g
}

impl<T: Scalar> H2Matrix<T> {
    /// Builds the cluster tree, block tree and interpolation-based H²-matrix.
    pub fn build<K: Kernel<T> + ?Sized>(kernel: &K, cloud: &PointCloud, params: H2Params) -> Result<Self> {
        if !(params.eta > 0.0) {
            return Err(H2Error::InvalidParameter(format!("eta must be positive, got {}", params.eta)));
        }
        let tree = ClusterTree::build(cloud, params.leaf_size)?;
        let bt = BlockTree::build(&tree, &tree, params.eta);
        Self::assemble(kernel, cloud, tree, bt, params.order)
    }

    /// Couplings are the kernel sampled at pairs of interpolation nodes, so that
    /// `V_t S_b W_s^*` interpolates `g` on admissible blocks; inadmissible blocks
    /// store kernel entries with the collocation diagonal.
    pub fn assemble<K: Kernel<T> + ?Sized>(
        kernel: &K,
        cloud: &PointCloud,
        tree: ClusterTree,
        block_tree: BlockTree,
        order: usize,
    ) -> Result<Self> {
        if tree.n() != cloud.len() {
            return Err(H2Error::Dimension {
                op: "assemble",
                expected: tree.n().to_string(),
                found: cloud.len().to_string(),
            });
        }
        let tree = Arc::new(tree);
        let basis = Arc::new(ClusterBasis::build(tree.clone(), cloud, order)?);
        let nodes: Vec<_> = (0..tree.len()).map(|id| basis.grid(id).nodes()).collect();

        let couplings = block_tree
            .admissible_leaves()
            .par_iter()
            .map(|&b| {
                let blk = block_tree.block(b);
                let (nt, ns) = (&nodes[blk.row], &nodes[blk.col]);
                debug_assert!(tree.cluster(blk.row).bbox.dist(&tree.cluster(blk.col).bbox) > 0.0);
                let s = DenseMatrix::from_fn(nt.len(), ns.len(), |mu, nu| kernel.evaluate(&nt[mu], &ns[nu]));
                if s.as_slice().iter().any(|v| !v.is_finite()) {
                    return Err(H2Error::NonFiniteKernel { row: blk.row, col: blk.col });
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;

        let has_nearfield_diagonal = block_tree
            .inadmissible_leaves()
            .iter()
            .any(|&b| block_tree.block(b).row == block_tree.block(b).col);
        let diag = if has_nearfield_diagonal {
            diagonal_values(kernel, cloud)
        } else {
            Vec::new()
        };
        let pts = cloud.points();
        let nearfield = block_tree
            .inadmissible_leaves()
            .par_iter()
            .map(|&b| {
                let blk = block_tree.block(b);
                let (rows, cols) = (tree.label(blk.row), tree.label(blk.col));
                let mut g = DenseMatrix::zeros(rows.len(), cols.len());
                for (c, &j) in cols.iter().enumerate() {
                    for (r, &i) in rows.iter().enumerate() {
                        let v = if i == j { diag[i] } else { kernel.evaluate(&pts[i], &pts[j]) };
                        if !v.is_finite() {
                            return Err(H2Error::NonFiniteKernel { row: i, col: j });
                        }
                        g[(r, c)] = v;
                    }
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;

        let row_lists = Some(RowLists::prepare(&block_tree, tree.len()));
        Ok(Self {
            row_tree: tree.clone(),
            col_tree: tree,
            block_tree,
            row_lists,
            row_basis: basis.clone(),
            col_basis: basis,
            couplings,
            nearfield,
        })
    }

    pub fn nrows(&self) -> usize {
        self.row_tree.n()
    }

    pub fn ncols(&self) -> usize {
        self.col_tree.n()
    }

    pub fn row_tree(&self) -> &Arc<ClusterTree> {
        &self.row_tree
    }

    pub fn col_tree(&self) -> &Arc<ClusterTree> {
        &self.col_tree
    }

    pub fn block_tree(&self) -> &BlockTree {
        &self.block_tree
    }

    pub fn row_basis(&self) -> &ClusterBasis<T> {
        &self.row_basis
    }

    pub fn col_basis(&self) -> &ClusterBasis<T> {
        &self.col_basis
    }

    pub fn rank(&self) -> usize {
        self.row_basis.rank()
    }

    pub fn order(&self) -> usize {
        self.row_basis.order()
    }

    /// Work lists of the multiplication phase, if they match the block tree.
    pub fn row_lists(&self) -> Option<&RowLists> {
        self.row_lists.as_ref().filter(|rl| rl.built_for() == self.block_tree.id())
    }

    /// Replaces the work lists; products that need them fail while they are absent.
    pub fn set_row_lists(&mut self, lists: Option<RowLists>) {
        self.row_lists = lists;
    }

    pub fn couplings(&self) -> &[DenseMatrix<T>] {
        &self.couplings
    }

    /// Mutable couplings, e.g. to zero the far field when building test operators.
    pub fn couplings_mut(&mut self) -> &mut [DenseMatrix<T>] {
        &mut self.couplings
    }

    pub fn nearfield(&self) -> &[DenseMatrix<T>] {
        &self.nearfield
    }

    /// Dense near-field block of block `id`, if it is an inadmissible leaf.
    pub fn nearfield_block(&self, block: usize) -> Option<&DenseMatrix<T>> {
        match self.block_tree.block(block).kind {
            BlockKind::Inadmissible { index } => Some(&self.nearfield[index]),
            _ => None,
        }
    }

    /// Storage of all coupling, near-field, leaf and transfer matrices.
    pub fn memory_bytes(&self) -> usize {
        let mut entries: usize = self
            .couplings
            .iter()
            .chain(&self.nearfield)
            .map(|m| m.rows() * m.cols())
            .sum();
        entries += self.row_basis.stored_entries();
        if !Arc::ptr_eq(&self.row_basis, &self.col_basis) {
            entries += self.col_basis.stored_entries();
        }
        entries * std::mem::size_of::<T>()
    }

    pub fn dense_memory_bytes(&self) -> usize {
        self.nrows() * self.ncols() * std::mem::size_of::<T>()
    }

    /// Materializes the represented matrix in original index order.
    pub fn densify(&self) -> DenseMatrix<T> {
        let v = self.row_basis.expanded();
        let w = if Arc::ptr_eq(&self.row_basis, &self.col_basis) {
            None
        } else {
            Some(self.col_basis.expanded())
        };
        let w = w.as_ref().unwrap_or(&v);
        let mut g = DenseMatrix::zeros(self.nrows(), self.ncols());
        for blk in self.block_tree.blocks().iter().filter(|b| b.is_leaf()) {
            let rows = self.row_tree.label(blk.row);
            let cols = self.col_tree.label(blk.col);
            let local = match blk.kind {
                BlockKind::Admissible { index } => {
                    let vs = v[blk.row].matmul(&self.couplings[index]).expect("conforming");
                    let mut out = DenseMatrix::zeros(rows.len(), cols.len());
                    let wt = w[blk.col].conj_transpose();
                    gemm_update(&mut out, &vs, &wt, T::one(), Op::NoTrans).expect("conforming");
                    out
                }
                BlockKind::Inadmissible { index } => self.nearfield[index].clone(),
                BlockKind::Subdivided => unreachable!("leaf blocks only"),
            };
            for (c, &j) in cols.iter().enumerate() {
                for (r, &i) in rows.iter().enumerate() {
                    g[(i, j)] = local[(r, c)];
                }
            }
        }
        g
    }

    pub fn stats(&self) -> H2Stats {
        let counts = self.block_tree.counts();
        H2Stats {
            n: self.nrows(),
            order: self.order(),
            rank: self.rank(),
            eta: self.block_tree.eta(),
            leaf_size: self.row_tree.leaf_size(),
            n_admissible: counts.admissible,
            n_inadmissible: counts.inadmissible,
            depth: self.row_tree.depth(),
            sparsity_constant: self.row_lists().map_or(0, RowLists::sparsity_constant),
            mem_bytes: self.memory_bytes(),
            mem_dense_bytes: self.dense_memory_bytes(),
        }
    }
}

/// Structural summary of an assembled matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct H2Stats {
    pub n: usize,
    pub order: usize,
    pub rank: usize,
    pub eta: f64,
    pub leaf_size: usize,
    pub n_admissible: usize,
    pub n_inadmissible: usize,
    pub depth: usize,
    pub sparsity_constant: usize,
    pub mem_bytes: usize,
    pub mem_dense_bytes: usize,
}

impl H2Stats {
    pub fn compression_ratio(&self) -> f64 {
        self.mem_bytes as f64 / self.mem_dense_bytes as f64
    }
}

/// `||A - B||_F / ||B||_F`.
pub fn relative_frobenius_error<T: Scalar>(approx: &DenseMatrix<T>, exact: &DenseMatrix<T>) -> f64 {
    let diff: f64 = approx
        .as_slice()
        .iter()
        .zip(exact.as_slice())
        .map(|(&a, &b)| (a - b).abs2())
        .sum();
    diff.sqrt() / exact.frobenius_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fibonacci_sphere;
    use crate::kernel::{Helmholtz3d, Laplace3d};
    use num_complex::Complex64;

    #[test]
    fn tiny_eta_reproduces_dense_matrix_exactly() {
        let cloud = fibonacci_sphere(128, 1.0).unwrap();
        let params = H2Params { leaf_size: 16, eta: 1e-12, order: 2 };
        let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, params).unwrap();
        assert_eq!(h2.block_tree().counts().admissible, 0);
        assert_eq!(h2.densify(), dense_kernel_matrix(&Laplace3d, &cloud));
    }

    #[test]
    fn order_one_blocks_are_rank_one_center_samples() {
        let mut pts: Vec<[f64; 3]> = fibonacci_sphere(20, 0.5).unwrap().points().to_vec();
        pts.extend(fibonacci_sphere(20, 0.5).unwrap().points().iter().map(|p| [p[0] + 10.0, p[1], p[2]]));
        let cloud = PointCloud::new(pts).unwrap();
        let params = H2Params { leaf_size: 20, eta: 2.0, order: 1 };
        let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, params).unwrap();
        assert_eq!(h2.block_tree().counts().admissible, 2);
        let g = h2.densify();
        for &b in h2.block_tree().admissible_leaves() {
            let blk = h2.block_tree().block(b);
            let ct = h2.row_tree().cluster(blk.row).bbox.center();
            let cs = h2.col_tree().cluster(blk.col).bbox.center();
            let expected: f64 = Laplace3d.evaluate(&ct, &cs);
            for &i in h2.row_tree().label(blk.row) {
                for &j in h2.col_tree().label(blk.col) {
                    assert!((g[(i, j)] - expected).abs() <= 1e-15 * expected);
                }
            }
        }
    }

    #[test]
    fn compression_error_small_and_decreasing() {
        let cloud = fibonacci_sphere(512, 1.0).unwrap();
        let exact = dense_kernel_matrix(&Laplace3d, &cloud);
        let errors: Vec<f64> = (2..=5)
            .map(|order| {
                let p = H2Params { leaf_size: 32, eta: 2.0, order };
                let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, p).unwrap();
                relative_frobenius_error(&h2.densify(), &exact)
            })
            .collect();
        assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
        assert!(errors[2] <= 1e-2);
    }

    #[test]
    fn laplace_densified_is_symmetric() {
        let cloud = fibonacci_sphere(300, 1.0).unwrap();
        let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, H2Params::default()).unwrap();
        let g = h2.densify();
        assert!(g.max_abs_diff(&g.transpose()) <= 1e-12);
    }

    #[test]
    fn helmholtz_compression() {
        let cloud = fibonacci_sphere(256, 1.0).unwrap();
        let kernel = Helmholtz3d { kappa: 1.0 };
        let h2 = H2Matrix::<Complex64>::build(&kernel, &cloud, H2Params { order: 4, ..Default::default() }).unwrap();
        let exact = dense_kernel_matrix(&kernel, &cloud);
        assert!(relative_frobenius_error(&h2.densify(), &exact) <= 1e-2);
    }

    #[test]
    fn storage_is_sublinear_in_dense_size() {
        let ratios: Vec<f64> = [512, 1024, 2048, 4096]
            .iter()
            .map(|&n| {
                let cloud = fibonacci_sphere(n, 1.0).unwrap();
                H2Matrix::<f64>::build(&Laplace3d, &cloud, H2Params::default())
                    .unwrap()
                    .stats()
                    .compression_ratio()
            })
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    }

    #[test]
    fn storage_accounting_matches_block_sizes() {
        let cloud = fibonacci_sphere(400, 1.0).unwrap();
        let h2 = H2Matrix::<f64>::build(&Laplace3d, &cloud, H2Params::default()).unwrap();
        assert_eq!(h2.couplings().len(), h2.block_tree().counts().admissible);
        assert_eq!(h2.nearfield().len(), h2.block_tree().counts().inadmissible);
        let k = h2.rank();
        let mut entries = h2.couplings().len() * k * k;
        for &b in h2.block_tree().inadmissible_leaves() {
            let blk = h2.block_tree().block(b);
            entries += h2.row_tree().cluster(blk.row).size() * h2.col_tree().cluster(blk.col).size();
        }
        for c in h2.row_tree().clusters() {
            if c.is_leaf() {
                entries += c.size() * k;
            }
            if c.parent.is_some() {
                entries += k * k;
            }
        }
        assert_eq!(h2.memory_bytes(), entries * 8);
    }
}
