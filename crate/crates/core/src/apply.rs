//! H²-matrix products `Y <- Y + alpha G X`.
//!
//! Every product runs the same three phases: the forward transformation
//! computes `x_hat_s = W_s^* x|_s` bottom-up, the multiplication phase adds
//! `S_b x_hat_s` into `y_hat_t` for admissible leaves and `G|_{t x s} x|_s` into
//! `y|_t` for inadmissible ones, and the backward transformation pushes `y_hat`
//! down to the leaves.
//!
//! Vectors are gathered into per-leaf buffers in tree order first. Each cluster
//! then owns its `x_hat`, `y_hat` and leaf buffers, and because clusters are
//! numbered in pre-order a subtree is a contiguous range of those buffers. The
//! parallel traversals hand each task the sub-slice of its subtree, so no two
//! tasks ever write the same memory. All accumulation orders are fixed (son order
//! for transfers, list order for the multiplication phase), making results
//! bitwise independent of the thread count.

use rayon::prelude::*;

use crate::basis::ClusterBasis;
use crate::block_tree::BlockKind;
use crate::cluster::ClusterTree;
use crate::dense::{gemm_update, DenseMatrix, MultiVector, Op};
use crate::error::{check_dim, H2Error, Result};
use crate::h2matrix::H2Matrix;
use crate::parallel;
use crate::scalar::Scalar;

/// Per-cluster coefficient blocks `x_hat_s` (`k x m`).
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedCoefficients<T> {
    blocks: Vec<DenseMatrix<T>>,
    m: usize,
}

impl<T: Scalar> TransformedCoefficients<T> {
    pub fn zeros(tree: &ClusterTree, rank: usize, m: usize) -> Self {
        Self {
            blocks: (0..tree.len()).map(|_| DenseMatrix::zeros(rank, m)).collect(),
            m,
        }
    }

    pub fn block(&self, cluster: usize) -> &DenseMatrix<T> {
        &self.blocks[cluster]
    }

    pub fn block_mut(&mut self, cluster: usize) -> &mut DenseMatrix<T> {
        &mut self.blocks[cluster]
    }

    pub fn columns(&self) -> usize {
        self.m
    }
}

/// Reusable buffers for products with one matrix.
#[derive(Clone, Debug)]
pub struct Workspace<T> {
    m: usize,
    xhat: Vec<DenseMatrix<T>>,
    yhat: Vec<DenseMatrix<T>>,
    xleaf: Vec<DenseMatrix<T>>,
    yleaf: Vec<DenseMatrix<T>>,
}

fn empty_buffers<T: Scalar>(count: usize) -> Vec<DenseMatrix<T>> {
    (0..count).map(|_| DenseMatrix::zeros(0, 0)).collect()
}

impl<T: Scalar> Workspace<T> {
    pub fn new(h2: &H2Matrix<T>) -> Self {
        let (nr, nc) = (h2.row_tree().len(), h2.col_tree().len());
        Self {
            m: 0,
            xhat: empty_buffers(nc),
            yhat: empty_buffers(nr),
            xleaf: empty_buffers(nc),
            yleaf: empty_buffers(nr),
        }
    }

    /// Columns the buffers are currently shaped for.
    pub fn columns(&self) -> usize {
        self.m
    }

    fn reset(&mut self, h2: &H2Matrix<T>, m: usize) {
        self.m = m;
        reset_tree_buffers(h2.col_tree(), h2.col_basis().rank(), m, &mut self.xhat, &mut self.xleaf);
        reset_tree_buffers(h2.row_tree(), h2.row_basis().rank(), m, &mut self.yhat, &mut self.yleaf);
    }
}

fn reset_tree_buffers<T: Scalar>(
    tree: &ClusterTree,
    rank: usize,
    m: usize,
    hat: &mut [DenseMatrix<T>],
    leaf: &mut [DenseMatrix<T>],
) {
    for (id, c) in tree.clusters().iter().enumerate() {
        hat[id].reset(rank, m);
        if c.is_leaf() {
            leaf[id].reset(c.size(), m);
        } else {
            leaf[id].reset(0, 0);
        }
    }
}

/// `buf_t <- x[label(t), cols]` for every leaf `t`.
fn gather<T: Scalar>(
    tree: &ClusterTree,
    x: &MultiVector<T>,
    cols: std::ops::Range<usize>,
    leaf: &mut [DenseMatrix<T>],
) {
    leaf.par_iter_mut().enumerate().for_each(|(id, buf)| {
        if buf.is_empty() {
            return;
        }
        let label = tree.label(id);
        for (local, j) in cols.clone().enumerate() {
            let src = x.col(j);
            for (dst, &i) in buf.col_mut(local).iter_mut().zip(label) {
                *dst = src[i];
            }
        }
    });
}

/// `y[label(t), cols] += buf_t` for every leaf `t`.
fn scatter_add<T: Scalar>(
    tree: &ClusterTree,
    leaf: &[DenseMatrix<T>],
    y: &mut MultiVector<T>,
    cols: std::ops::Range<usize>,
) {
    let n = y.rows();
    let start = cols.start;
    let block = &mut y.as_mut_slice()[cols.start * n..cols.end * n];
    block.par_chunks_mut(n.max(1)).enumerate().for_each(|(local, dst)| {
        debug_assert!(start + local < cols.end);
        for (id, buf) in leaf.iter().enumerate() {
            if buf.is_empty() {
                continue;
            }
            for (&v, &i) in buf.col(local).iter().zip(tree.label(id)) {
                dst[i] += v;
            }
        }
    });
}

/// Level up to which the traversals fork: the first level holding at least
/// `4 * threads` clusters. Below it each task runs its subtree sequentially.
fn cut_level(tree: &ClusterTree, threads: usize) -> usize {
    let counts = tree.level_counts();
    counts
        .iter()
        .position(|&c| c >= 4 * threads)
        .unwrap_or(counts.len())
}

/// Splits a subtree slice (rooted at `id`) into the root entry and one slice per son.
fn split_subtree<'a, B>(tree: &ClusterTree, id: usize, sub: &'a mut [B]) -> (&'a mut B, Vec<&'a mut [B]>) {
    let (me, mut rest) = sub.split_first_mut().expect("non-empty subtree");
    let sons = &tree.cluster(id).sons;
    let mut parts = Vec::with_capacity(sons.len());
    for &son in sons {
        let (head, tail) = rest.split_at_mut(tree.cluster(son).subtree_len);
        parts.push(head);
        rest = tail;
    }
    (me, parts)
}

fn forward_rec<T: Scalar>(
    basis: &ClusterBasis<T>,
    id: usize,
    xhat: &mut [DenseMatrix<T>],
    xleaf: &[DenseMatrix<T>],
    cut: usize,
) {
    let tree = basis.tree();
    let c = tree.cluster(id);
    if c.is_leaf() {
        gemm_update(&mut xhat[0], basis.leaf_matrix(id), &xleaf[0], T::one(), Op::ConjTrans)
            .expect("forward: leaf shapes");
        return;
    }
    let (me, parts) = split_subtree(tree, id, xhat);
    let leaf_parts: Vec<&[DenseMatrix<T>]> = {
        let mut rest = &xleaf[1..];
        c.sons
            .iter()
            .map(|&s| {
                let (head, tail) = rest.split_at(tree.cluster(s).subtree_len);
                rest = tail;
                head
            })
            .collect()
    };
    let mut parts = parts;
    if c.level < cut {
        parts
            .par_iter_mut()
            .zip(c.sons.par_iter())
            .zip(leaf_parts.par_iter())
            .for_each(|((sub, &son), leaf)| forward_rec(basis, son, sub, leaf, cut));
    } else {
        for ((sub, &son), leaf) in parts.iter_mut().zip(&c.sons).zip(&leaf_parts) {
            forward_rec(basis, son, sub, leaf, cut);
        }
    }
    // the transfer products all write x_hat_s, so they run after the join, in son order
    for (sub, &son) in parts.iter().zip(&c.sons) {
        gemm_update(me, basis.transfer_matrix(son), &sub[0], T::one(), Op::ConjTrans)
            .expect("forward: transfer shapes");
    }
}

fn backward_rec<T: Scalar>(
    basis: &ClusterBasis<T>,
    id: usize,
    yhat: &mut [DenseMatrix<T>],
    yleaf: &mut [DenseMatrix<T>],
    cut: usize,
) {
    let tree = basis.tree();
    let c = tree.cluster(id);
    if c.is_leaf() {
        gemm_update(&mut yleaf[0], basis.leaf_matrix(id), &yhat[0], T::one(), Op::NoTrans)
            .expect("backward: leaf shapes");
        return;
    }
    let (me, parts) = split_subtree(tree, id, yhat);
    let (_, leaf_parts) = split_subtree(tree, id, yleaf);
    let me: &DenseMatrix<T> = me;
    let body = |(sub, leaf): (&mut [DenseMatrix<T>], &mut [DenseMatrix<T>]), son: usize| {
        gemm_update(&mut sub[0], basis.transfer_matrix(son), me, T::one(), Op::NoTrans)
            .expect("backward: transfer shapes");
        backward_rec(basis, son, sub, leaf, cut);
    };
    if c.level < cut {
        parts
            .into_par_iter()
            .zip(leaf_parts.into_par_iter())
            .zip(c.sons.par_iter())
            .for_each(|(pair, &son)| body(pair, son));
    } else {
        for (pair, &son) in parts.into_iter().zip(leaf_parts).zip(&c.sons) {
            body(pair, son);
        }
    }
}

struct Phase<'a, T> {
    h2: &'a H2Matrix<T>,
    alpha: T,
    xhat: &'a [DenseMatrix<T>],
    xleaf: &'a [DenseMatrix<T>],
}

impl<T: Scalar> Phase<'_, T> {
    #[inline]
    fn leaf_block(&self, block: usize, col: usize, yhat: &mut DenseMatrix<T>, yleaf: &mut DenseMatrix<T>) {
        match self.h2.block_tree().block(block).kind {
            BlockKind::Admissible { index } => {
                gemm_update(yhat, &self.h2.couplings()[index], &self.xhat[col], self.alpha, Op::NoTrans)
            }
            BlockKind::Inadmissible { index } => {
                gemm_update(yleaf, &self.h2.nearfield()[index], &self.xleaf[col], self.alpha, Op::NoTrans)
            }
            BlockKind::Subdivided => unreachable!("work lists only hold leaves"),
        }
        .expect("multiplication phase shapes");
    }

    /// Recursion over the block tree; single-threaded reference.
    fn recursive(&self, block: usize, yhat: &mut [DenseMatrix<T>], yleaf: &mut [DenseMatrix<T>]) {
        let b = self.h2.block_tree().block(block);
        if b.is_leaf() {
            let (row, col) = (b.row, b.col);
            self.leaf_block(block, col, &mut yhat[row], &mut yleaf[row]);
        } else {
            for &s in &b.sons {
                self.recursive(s, yhat, yleaf);
            }
        }
    }

    /// Drains the work list of every cluster in the subtree rooted at `id`.
    fn lists(&self, id: usize, yhat: &mut [DenseMatrix<T>], yleaf: &mut [DenseMatrix<T>], cut: usize) {
        let tree = self.h2.row_tree();
        let lists = self.h2.row_lists().expect("checked by caller");
        let (me_hat, hat_parts) = split_subtree(tree, id, yhat);
        let (me_leaf, leaf_parts) = split_subtree(tree, id, yleaf);
        for e in lists.list(id) {
            self.leaf_block(e.block, e.col, me_hat, me_leaf);
        }
        let c = tree.cluster(id);
        if c.level < cut {
            hat_parts
                .into_par_iter()
                .zip(leaf_parts.into_par_iter())
                .zip(c.sons.par_iter())
                .for_each(|((h, l), &son)| self.lists(son, h, l, cut));
        } else {
            for ((h, l), &son) in hat_parts.into_iter().zip(leaf_parts).zip(&c.sons) {
                self.lists(son, h, l, cut);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Strategy {
    Recursive,
    Lists,
}

fn check_shapes<T: Scalar>(h2: &H2Matrix<T>, x: &MultiVector<T>, y: &MultiVector<T>) -> Result<()> {
    check_dim("H2 product: x rows", h2.ncols(), x.rows())?;
    check_dim("H2 product: y rows", h2.nrows(), y.rows())?;
    check_dim("H2 product: columns", x.cols(), y.cols())
}

fn product<T: Scalar>(
    ws: &mut Workspace<T>,
    h2: &H2Matrix<T>,
    alpha: T,
    x: &MultiVector<T>,
    y: &mut MultiVector<T>,
    cols: std::ops::Range<usize>,
    strategy: Strategy,
    threads: usize,
) {
    ws.reset(h2, cols.len());
    let Workspace { xhat, yhat, xleaf, yleaf, .. } = ws;
    let (rt, ct) = (h2.row_tree(), h2.col_tree());
    match strategy {
        Strategy::Recursive => {
            gather(ct, x, cols.clone(), xleaf);
            forward_rec(h2.col_basis(), ct.root(), xhat, xleaf, 0);
            let phase = Phase { h2, alpha, xhat, xleaf };
            phase.recursive(h2.block_tree().root(), yhat, yleaf);
            backward_rec(h2.row_basis(), rt.root(), yhat, yleaf, 0);
            scatter_add(rt, yleaf, y, cols);
        }
        Strategy::Lists => {
            let (cut_c, cut_r) = (cut_level(ct, threads), cut_level(rt, threads));
            parallel::install(threads, || {
                gather(ct, x, cols.clone(), xleaf);
                forward_rec(h2.col_basis(), ct.root(), xhat, xleaf, cut_c);
                let phase = Phase { h2, alpha, xhat, xleaf };
                phase.lists(rt.root(), yhat, yleaf, cut_r);
                backward_rec(h2.row_basis(), rt.root(), yhat, yleaf, cut_r);
                scatter_add(rt, yleaf, y, cols);
            });
        }
    }
}

/// Sequential reference product: recursive forward, block-tree recursion for the
/// multiplication phase, recursive backward. Every column is processed at once.
pub fn addeval_recursive<T: Scalar>(
    alpha: T,
    h2: &H2Matrix<T>,
    x: &MultiVector<T>,
    y: &mut MultiVector<T>,
) -> Result<()> {
    check_shapes(h2, x, y)?;
    if x.cols() == 0 {
        return Ok(());
    }
    let mut ws = Workspace::new(h2);
    product(&mut ws, h2, alpha, x, y, 0..x.cols(), Strategy::Recursive, 1);
    Ok(())
}

/// Parallel list-based product, one matrix–vector product per column of `x`.
pub fn addeval_list<T: Scalar>(
    alpha: T,
    h2: &H2Matrix<T>,
    x: &MultiVector<T>,
    y: &mut MultiVector<T>,
    threads: usize,
) -> Result<()> {
    let mut ws = Workspace::new(h2);
    addeval_list_with(&mut ws, alpha, h2, x, y, threads)
}

pub fn addeval_list_with<T: Scalar>(
    ws: &mut Workspace<T>,
    alpha: T,
    h2: &H2Matrix<T>,
    x: &MultiVector<T>,
    y: &mut MultiVector<T>,
    threads: usize,
) -> Result<()> {
    check_shapes(h2, x, y)?;
    if h2.row_lists().is_none() {
        return Err(H2Error::MissingRowLists);
    }
    for j in 0..x.cols() {
        product(ws, h2, alpha, x, y, j..j + 1, Strategy::Lists, threads);
    }
    Ok(())
}

/// Parallel list-based product over all columns at once: the transformed
/// coefficients become `k x m` blocks and every leaf update is a GEMM.
pub fn addeval_block<T: Scalar>(
    alpha: T,
    h2: &H2Matrix<T>,
    x: &MultiVector<T>,
    y: &mut MultiVector<T>,
    threads: usize,
) -> Result<()> {
    let mut ws = Workspace::new(h2);
    addeval_block_with(&mut ws, alpha, h2, x, y, threads)
}

pub fn addeval_block_with<T: Scalar>(
    ws: &mut Workspace<T>,
    alpha: T,
    h2: &H2Matrix<T>,
    x: &MultiVector<T>,
    y: &mut MultiVector<T>,
    threads: usize,
) -> Result<()> {
    check_shapes(h2, x, y)?;
    if h2.row_lists().is_none() {
        return Err(H2Error::MissingRowLists);
    }
    if x.cols() == 0 {
        return Ok(());
    }
    product(ws, h2, alpha, x, y, 0..x.cols(), Strategy::Lists, threads);
    Ok(())
}

fn check_basis_input<T: Scalar>(basis: &ClusterBasis<T>, x: &MultiVector<T>) -> Result<()> {
    check_dim("forward: x rows", basis.tree().n(), x.rows())
}

fn leaf_buffers<T: Scalar>(tree: &ClusterTree, m: usize) -> Vec<DenseMatrix<T>> {
    tree.clusters()
        .iter()
        .map(|c| if c.is_leaf() { DenseMatrix::zeros(c.size(), m) } else { DenseMatrix::zeros(0, 0) })
        .collect()
}

fn transform<T: Scalar>(basis: &ClusterBasis<T>, x: &MultiVector<T>, cut: usize) -> TransformedCoefficients<T> {
    let tree = basis.tree();
    let mut xleaf = leaf_buffers(tree, x.cols());
    gather(tree, x, 0..x.cols(), &mut xleaf);
    let mut coeffs = TransformedCoefficients::zeros(tree, basis.rank(), x.cols());
    forward_rec(basis, tree.root(), &mut coeffs.blocks, &xleaf, cut);
    coeffs
}

/// Forward transformation `x_hat_s = W_s^* x|_s`, computed through the nested basis.
pub fn forward<T: Scalar>(basis: &ClusterBasis<T>, x: &MultiVector<T>) -> Result<TransformedCoefficients<T>> {
    check_basis_input(basis, x)?;
    Ok(transform(basis, x, 0))
}

pub fn parallel_forward<T: Scalar>(
    basis: &ClusterBasis<T>,
    x: &MultiVector<T>,
    threads: usize,
) -> Result<TransformedCoefficients<T>> {
    check_basis_input(basis, x)?;
    let cut = cut_level(basis.tree(), parallel::resolve_threads(threads));
    Ok(parallel::install(threads, || transform(basis, x, cut)))
}

fn untransform<T: Scalar>(
    basis: &ClusterBasis<T>,
    yhat: &mut TransformedCoefficients<T>,
    y: &mut MultiVector<T>,
    cut: usize,
) {
    let tree = basis.tree();
    let mut yleaf = leaf_buffers(tree, y.cols());
    backward_rec(basis, tree.root(), &mut yhat.blocks, &mut yleaf, cut);
    scatter_add(tree, &yleaf, y, 0..y.cols());
}

fn check_backward<T: Scalar>(
    basis: &ClusterBasis<T>,
    yhat: &TransformedCoefficients<T>,
    y: &MultiVector<T>,
) -> Result<()> {
    check_dim("backward: y rows", basis.tree().n(), y.rows())?;
    check_dim("backward: columns", yhat.m, y.cols())?;
    check_dim("backward: clusters", basis.tree().len(), yhat.blocks.len())
}

/// Backward transformation `y += sum_t V_t y_hat_t`. Sons' coefficients in
/// `yhat` accumulate their parents' contributions on the way down.
pub fn backward<T: Scalar>(
    basis: &ClusterBasis<T>,
    yhat: &mut TransformedCoefficients<T>,
    y: &mut MultiVector<T>,
) -> Result<()> {
    check_backward(basis, yhat, y)?;
    untransform(basis, yhat, y, 0);
    Ok(())
}

pub fn parallel_backward<T: Scalar>(
    basis: &ClusterBasis<T>,
    yhat: &mut TransformedCoefficients<T>,
    y: &mut MultiVector<T>,
    threads: usize,
) -> Result<()> {
    check_backward(basis, yhat, y)?;
    let cut = cut_level(basis.tree(), parallel::resolve_threads(threads));
    parallel::install(threads, || untransform(basis, yhat, y, cut));
    Ok(())
}
