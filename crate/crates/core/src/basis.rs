//! Nested cluster bases from tensor Chebyshev interpolation.
//!
//! For a cluster `t` with interpolation nodes `xi_{t,nu}` the basis `V_t` holds the
//! Lagrange polynomials `L_{t,nu}` evaluated at the points of `t`. Only leaves store
//! `V_t` explicitly; a son `t'` stores the transfer matrix
//! `E_{t'}[nu', nu] = L_{t,nu}(xi_{t',nu'})`, and since `L_{t,nu}` lies in the span of the
//! son's interpolation space, `V_t|_{t'} = V_{t'} E_{t'}` holds up to rounding.

use std::sync::Arc;

use rayon::prelude::*;

use crate::cluster::ClusterTree;
use crate::dense::DenseMatrix;
use crate::error::{H2Error, Result};
use crate::geometry::{BoundingBox, Point3, PointCloud};
use crate::scalar::Scalar;

/// 1D Chebyshev points of the first kind on `[-1, 1]`: `cos((2j + 1) pi / (2p))`.
pub fn chebyshev_points(order: usize) -> Vec<f64> {
    (0..order)
        .map(|j| ((2 * j + 1) as f64 * std::f64::consts::PI / (2 * order) as f64).cos())
        .collect()
}

fn axis_nodes(bbox: &BoundingBox, axis: usize, order: usize) -> Vec<f64> {
    let mid = 0.5 * (bbox.lo[axis] + bbox.hi[axis]);
    let half = 0.5 * bbox.extent(axis);
    chebyshev_points(order).into_iter().map(|c| mid + half * c).collect()
}

/// The `order^3` tensor grid of Chebyshev nodes mapped into `bbox`.
///
/// Node `nu = ix + order * (iy + order * iz)` sits at the `(ix, iy, iz)` axis nodes.
pub fn chebyshev_nodes(bbox: &BoundingBox, order: usize) -> Result<Vec<Point3>> {
    if order == 0 {
        return Err(H2Error::InvalidParameter("interpolation order must be >= 1".into()));
    }
    let axes = [0, 1, 2].map(|a| axis_nodes(bbox, a, order));
    let mut nodes = Vec::with_capacity(order.pow(3));
    for z in &axes[2] {
        for y in &axes[1] {
            for x in &axes[0] {
                nodes.push([*x, *y, *z]);
            }
        }
    }
    Ok(nodes)
}

fn lagrange_1d(nodes: &[f64], x: f64, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let mut v = 1.0;
        for (l, &xl) in nodes.iter().enumerate() {
            if l != j {
                v *= (x - xl) / (nodes[j] - xl);
            }
        }
        *o = v;
    }
}

/// Interpolation grid of one cluster.
#[derive(Clone, Debug)]
pub struct InterpolationGrid {
    pub bbox: BoundingBox,
    axes: [Vec<f64>; 3],
}

impl InterpolationGrid {
    fn new(bbox: BoundingBox, order: usize) -> Self {
        let axes = [0, 1, 2].map(|a| axis_nodes(&bbox, a, order));
        Self { bbox, axes }
    }

    pub fn order(&self) -> usize {
        self.axes[0].len()
    }

    pub fn nodes(&self) -> Vec<Point3> {
        chebyshev_nodes(&self.bbox, self.order()).expect("order >= 1")
    }

    /// Writes all `order^3` Lagrange polynomials evaluated at `p` into `out`.
    pub fn lagrange(&self, p: &Point3, out: &mut [f64]) {
        let q = self.order();
        let mut l = [vec![0.0; q], vec![0.0; q], vec![0.0; q]];
        for a in 0..3 {
            lagrange_1d(&self.axes[a], p[a], &mut l[a]);
        }
        let mut nu = 0;
        for lz in &l[2] {
            for ly in &l[1] {
                let lyz = ly * lz;
                for lx in &l[0] {
                    out[nu] = lx * lyz;
                    nu += 1;
                }
            }
        }
    }
}

/// Leaf matrices `V_t` (leaves only) and transfer matrices `E_t` (non-roots only).
#[derive(Clone, Debug)]
pub struct ClusterBasis<T> {
    tree: Arc<ClusterTree>,
    order: usize,
    rank: usize,
    grids: Vec<InterpolationGrid>,
    leaf: Vec<DenseMatrix<T>>,
    transfer: Vec<DenseMatrix<T>>,
}

impl<T: Scalar> ClusterBasis<T> {
    /// Builds the nested basis of rank `order^3` for `tree` over `cloud`.
    pub fn build(tree: Arc<ClusterTree>, cloud: &PointCloud, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(H2Error::InvalidParameter("interpolation order must be >= 1".into()));
        }
        if cloud.len() != tree.n() {
            return Err(H2Error::Dimension {
                op: "ClusterBasis::build",
                expected: tree.n().to_string(),
                found: cloud.len().to_string(),
            });
        }
        let rank = order.pow(3);
        let grids: Vec<InterpolationGrid> = interpolation_boxes(&tree)
            .into_iter()
            .map(|b| InterpolationGrid::new(b, order))
            .collect();

        let pts = cloud.points();
        let leaf = (0..tree.len())
            .into_par_iter()
            .map(|id| {
                if !tree.cluster(id).is_leaf() {
                    return DenseMatrix::zeros(0, 0);
                }
                let label = tree.label(id);
                let mut v = DenseMatrix::zeros(label.len(), rank);
                let mut buf = vec![0.0; rank];
                for (row, &i) in label.iter().enumerate() {
                    grids[id].lagrange(&pts[i], &mut buf);
                    for (nu, &b) in buf.iter().enumerate() {
                        v[(row, nu)] = T::from_real(b);
                    }
                }
                v
            })
            .collect();

        let transfer = (0..tree.len())
            .into_par_iter()
            .map(|id| match tree.cluster(id).parent {
                None => DenseMatrix::zeros(0, 0),
                Some(parent) => {
                    let mut e = DenseMatrix::zeros(rank, rank);
                    let mut buf = vec![0.0; rank];
                    for (row, node) in grids[id].nodes().iter().enumerate() {
                        grids[parent].lagrange(node, &mut buf);
                        for (nu, &b) in buf.iter().enumerate() {
                            e[(row, nu)] = T::from_real(b);
                        }
                    }
                    e
                }
            })
            .collect();

        Ok(Self {
            tree,
            order,
            rank,
            grids,
            leaf,
            transfer,
        })
    }

    pub fn tree(&self) -> &Arc<ClusterTree> {
        &self.tree
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn grid(&self, id: usize) -> &InterpolationGrid {
        &self.grids[id]
    }

    /// `V_t` for a leaf; empty for internal clusters.
    pub fn leaf_matrix(&self, id: usize) -> &DenseMatrix<T> {
        &self.leaf[id]
    }

    /// `E_t` for a non-root cluster; empty for the root.
    pub fn transfer_matrix(&self, id: usize) -> &DenseMatrix<T> {
        &self.transfer[id]
    }

    /// Scalar count of all stored leaf and transfer matrices.
    pub fn stored_entries(&self) -> usize {
        self.leaf.iter().chain(&self.transfer).map(|m| m.rows() * m.cols()).sum()
    }

    /// Lagrange polynomials of cluster `id` evaluated directly at its own points,
    /// rows in label order. Independent of the transfer matrices.
    pub fn direct_matrix(&self, id: usize, cloud: &PointCloud) -> DenseMatrix<T> {
        let label = self.tree.label(id);
        let mut v = DenseMatrix::zeros(label.len(), self.rank);
        let mut buf = vec![0.0; self.rank];
        for (row, &i) in label.iter().enumerate() {
            self.grids[id].lagrange(&cloud.points()[i], &mut buf);
            for (nu, &b) in buf.iter().enumerate() {
                v[(row, nu)] = T::from_real(b);
            }
        }
        v
    }

    /// `V_t` for every cluster, internal ones expanded through the transfer matrices.
    pub fn expanded(&self) -> Vec<DenseMatrix<T>> {
        let mut out: Vec<DenseMatrix<T>> = vec![DenseMatrix::zeros(0, 0); self.tree.len()];
        // sons have larger ids than their parents in pre-order
        for id in (0..self.tree.len()).rev() {
            let c = self.tree.cluster(id);
            if c.is_leaf() {
                out[id] = self.leaf[id].clone();
                continue;
            }
            let mut v = DenseMatrix::zeros(c.size(), self.rank);
            for &son in &c.sons {
                let part = out[son].matmul(&self.transfer[son]).expect("conforming shapes");
                let offset = self.tree.cluster(son).range.start - c.range.start;
                for col in 0..self.rank {
                    for r in 0..part.rows() {
                        v[(offset + r, col)] = part[(r, col)];
                    }
                }
            }
            out[id] = v;
        }
        out
    }

    /// Largest elementwise `|V_t|_{t'} - V_{t'} E_{t'}|`, both `V` evaluated directly.
    pub fn nestedness_defect(&self, cloud: &PointCloud) -> f64 {
        (0..self.tree.len())
            .into_par_iter()
            .filter(|&id| !self.tree.cluster(id).is_leaf())
            .map(|id| {
                let c = self.tree.cluster(id);
                let parent = self.direct_matrix(id, cloud);
                let mut worst: f64 = 0.0;
                for &son in &c.sons {
                    let rebuilt = self.direct_matrix(son, cloud).matmul(&self.transfer[son]).unwrap();
                    let offset = self.tree.cluster(son).range.start - c.range.start;
                    for col in 0..self.rank {
                        for r in 0..rebuilt.rows() {
                            worst = worst.max((parent[(offset + r, col)] - rebuilt[(r, col)]).abs());
                        }
                    }
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// Tight boxes, except that axes thinner than a small fraction of the root
/// diameter are widened around their midpoint so that nodes stay distinct.
fn interpolation_boxes(tree: &ClusterTree) -> Vec<BoundingBox> {
    let root = tree.cluster(tree.root()).bbox;
    let scale = if root.diam() > 0.0 { root.diam() } else { 1.0 };
    let width = 1e-6 * scale;
    tree.clusters()
        .iter()
        .map(|c| {
            let mut b = c.bbox;
            for a in 0..3 {
                if b.extent(a) < width {
                    let mid = 0.5 * (b.lo[a] + b.hi[a]);
                    b.lo[a] = mid - 0.5 * width;
                    b.hi[a] = mid + 0.5 * width;
                }
            }
            b
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fibonacci_sphere;

    #[test]
    fn order_one_node_is_center() {
        let b = BoundingBox::new([-1.0; 3], [1.0; 3]);
        let n = chebyshev_nodes(&b, 1).unwrap();
        assert_eq!(n.len(), 1);
        for c in n[0] {
            assert!(c.abs() < 1e-16);
        }
    }

    #[test]
    fn order_two_nodes() {
        let b = BoundingBox::new([-1.0; 3], [1.0; 3]);
        let n = chebyshev_nodes(&b, 2).unwrap();
        assert_eq!(n.len(), 8);
        let r = std::f64::consts::FRAC_PI_4.cos();
        for p in &n {
            for c in p {
                assert!((c.abs() - r).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn order_three_nodes_on_shifted_box() {
        let b = BoundingBox::new([0.0; 3], [2.0; 3]);
        let n = chebyshev_nodes(&b, 3).unwrap();
        assert_eq!(n.len(), 27);
        let c6 = (std::f64::consts::PI / 6.0).cos();
        let expected = [1.0 + c6, 1.0, 1.0 - c6];
        for (ix, e) in expected.iter().enumerate() {
            assert!((n[ix][0] - e).abs() < 1e-15);
            assert!((n[3 * ix][1] - e).abs() < 1e-15);
            assert!((n[9 * ix][2] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_axis_collapses() {
        let b = BoundingBox::new([0.0, 0.0, 1.0], [1.0, 1.0, 1.0]);
        let n = chebyshev_nodes(&b, 2).unwrap();
        assert!(n.iter().all(|p| p[2] == 1.0));
    }

    #[test]
    fn order_one_basis_is_constant() {
        let cloud = fibonacci_sphere(200, 1.0).unwrap();
        let tree = Arc::new(ClusterTree::build(&cloud, 16).unwrap());
        let basis = ClusterBasis::<f64>::build(tree.clone(), &cloud, 1).unwrap();
        for id in 0..tree.len() {
            let c = tree.cluster(id);
            if c.is_leaf() {
                assert!(basis.leaf_matrix(id).as_slice().iter().all(|&v| v == 1.0));
            }
            if c.parent.is_some() {
                assert_eq!(basis.transfer_matrix(id), &DenseMatrix::identity(1));
            }
        }
    }

    #[test]
    fn single_leaf_tree_has_no_transfers() {
        let cloud = fibonacci_sphere(10, 1.0).unwrap();
        let tree = Arc::new(ClusterTree::build(&cloud, 16).unwrap());
        let basis = ClusterBasis::<f64>::build(tree, &cloud, 2).unwrap();
        assert!(basis.transfer_matrix(0).is_empty());
        assert_eq!(basis.leaf_matrix(0), &basis.direct_matrix(0, &cloud));
    }

    #[test]
    fn two_level_nestedness_explicit() {
        let cloud = fibonacci_sphere(40, 1.0).unwrap();
        let tree = Arc::new(ClusterTree::build(&cloud, 20).unwrap());
        assert_eq!(tree.len(), 3);
        let basis = ClusterBasis::<f64>::build(tree.clone(), &cloud, 2).unwrap();
        let root = basis.direct_matrix(0, &cloud);
        for son in [1, 2] {
            let rebuilt = basis.leaf_matrix(son).matmul(basis.transfer_matrix(son)).unwrap();
            let off = tree.cluster(son).range.start;
            for r in 0..rebuilt.rows() {
                for c in 0..8 {
                    assert!((root[(off + r, c)] - rebuilt[(r, c)]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn nestedness_sweep() {
        let cloud = fibonacci_sphere(1000, 1.0).unwrap();
        let tree = Arc::new(ClusterTree::build(&cloud, 16).unwrap());
        for order in 1..=5 {
            let basis = ClusterBasis::<f64>::build(tree.clone(), &cloud, order).unwrap();
            let d = basis.nestedness_defect(&cloud);
            assert!(d <= 1e-12, "order {order}: {d}");
        }
    }

    #[test]
    fn lagrange_is_partition_of_unity() {
        let g = InterpolationGrid::new(BoundingBox::new([0.0; 3], [1.0, 2.0, 0.5]), 4);
        let mut out = vec![0.0; 64];
        g.lagrange(&[0.3, 1.7, 0.1], &mut out);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }
}
