//! Admissible block trees and the per-row-cluster work lists of the
//! multiplication phase.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::cluster::ClusterTree;
use crate::geometry::BoundingBox;

pub const DEFAULT_ETA: f64 = 2.0;

/// Standard admissibility: `max(diam(t), diam(s)) <= eta * dist(t, s)`.
/// Touching boxes are never admissible, even when both are single points.
pub fn admissible(bt: &BoundingBox, bs: &BoundingBox, eta: f64) -> bool {
    let dist = bt.dist(bs);
    dist > 0.0 && bt.diam().max(bs.diam()) <= eta * dist
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Far field; `index` selects the coupling matrix.
    Admissible { index: usize },
    /// Near field; `index` selects the dense block.
    Inadmissible { index: usize },
    Subdivided,
}

#[derive(Clone, Debug)]
pub struct Block {
    pub row: usize,
    pub col: usize,
    pub kind: BlockKind,
    pub sons: Vec<usize>,
}

impl Block {
    pub fn is_leaf(&self) -> bool {
        self.sons.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BlockCounts {
    pub admissible: usize,
    pub inadmissible: usize,
    pub subdivided: usize,
}

/// Blocks in pre-order; block 0 pairs the two roots.
#[derive(Clone, Debug)]
pub struct BlockTree {
    id: u64,
    blocks: Vec<Block>,
    eta: f64,
    counts: BlockCounts,
    admissible_leaves: Vec<usize>,
    inadmissible_leaves: Vec<usize>,
}

static NEXT_TREE_ID: AtomicU64 = AtomicU64::new(1);

enum Node {
    Leaf { row: usize, col: usize, admissible: bool },
    Inner { row: usize, col: usize, sons: Vec<Node> },
}

fn subdivide(rows: &ClusterTree, cols: &ClusterTree, t: usize, s: usize, eta: f64) -> Node {
    let (ct, cs) = (rows.cluster(t), cols.cluster(s));
    if admissible(&ct.bbox, &cs.bbox, eta) {
        return Node::Leaf { row: t, col: s, admissible: true };
    }
    let pairs: Vec<(usize, usize)> = match (ct.is_leaf(), cs.is_leaf()) {
        (true, true) => return Node::Leaf { row: t, col: s, admissible: false },
        (true, false) => cs.sons.iter().map(|&s2| (t, s2)).collect(),
        (false, true) => ct.sons.iter().map(|&t2| (t2, s)).collect(),
        (false, false) => ct
            .sons
            .iter()
            .flat_map(|&t2| cs.sons.iter().map(move |&s2| (t2, s2)))
            .collect(),
    };
    let sons = pairs
        .into_par_iter()
        .map(|(t2, s2)| subdivide(rows, cols, t2, s2, eta))
        .collect();
    Node::Inner { row: t, col: s, sons }
}

impl BlockTree {
    pub fn build(rows: &ClusterTree, cols: &ClusterTree, eta: f64) -> Self {
        let root = subdivide(rows, cols, rows.root(), cols.root(), eta);
        let mut tree = Self {
            id: NEXT_TREE_ID.fetch_add(1, Ordering::Relaxed),
            blocks: Vec::new(),
            eta,
            counts: BlockCounts::default(),
            admissible_leaves: Vec::new(),
            inadmissible_leaves: Vec::new(),
        };
        tree.flatten(root);
        tree
    }

    fn flatten(&mut self, node: Node) -> usize {
        let id = self.blocks.len();
        match node {
            Node::Leaf { row, col, admissible } => {
                let kind = if admissible {
                    self.counts.admissible += 1;
                    self.admissible_leaves.push(id);
                    BlockKind::Admissible { index: self.admissible_leaves.len() - 1 }
                } else {
                    self.counts.inadmissible += 1;
                    self.inadmissible_leaves.push(id);
                    BlockKind::Inadmissible { index: self.inadmissible_leaves.len() - 1 }
                };
                self.blocks.push(Block { row, col, kind, sons: Vec::new() });
            }
            Node::Inner { row, col, sons } => {
                self.counts.subdivided += 1;
                self.blocks.push(Block { row, col, kind: BlockKind::Subdivided, sons: Vec::new() });
                let ids: Vec<usize> = sons.into_iter().map(|s| self.flatten(s)).collect();
                self.blocks[id].sons = ids;
            }
        }
        id
    }

    /// Identity token used to tie derived structures to this tree.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn block(&self, id: usize) -> &Block {
        &self.blocks[id]
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn counts(&self) -> &BlockCounts {
        &self.counts
    }

    /// Block ids of admissible leaves, ordered by coupling index.
    pub fn admissible_leaves(&self) -> &[usize] {
        &self.admissible_leaves
    }

    /// Block ids of inadmissible leaves, ordered by near-field index.
    pub fn inadmissible_leaves(&self) -> &[usize] {
        &self.inadmissible_leaves
    }

    pub fn leaf_count(&self) -> usize {
        self.counts.admissible + self.counts.inadmissible
    }

    pub fn depth(&self) -> usize {
        fn rec(bt: &BlockTree, id: usize) -> usize {
            bt.blocks[id].sons.iter().map(|&s| 1 + rec(bt, s)).max().unwrap_or(0)
        }
        rec(self, 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowEntry {
    pub block: usize,
    pub col: usize,
}

/// Leaf blocks sorted by row cluster (`C_t`), indexed by row-cluster id.
///
/// Lists are attached to whichever cluster is the row of the leaf block, which
/// may be an internal cluster for admissible blocks high up in the tree.
#[derive(Clone, Debug)]
pub struct RowLists {
    lists: Vec<Vec<RowEntry>>,
    built_for: u64,
}

impl RowLists {
    /// One pre-order pass over the block tree.
    pub fn prepare(bt: &BlockTree, row_clusters: usize) -> Self {
        let mut lists = vec![Vec::new(); row_clusters];
        fn rec(bt: &BlockTree, id: usize, lists: &mut [Vec<RowEntry>]) {
            let b = bt.block(id);
            if b.is_leaf() {
                lists[b.row].push(RowEntry { block: id, col: b.col });
            } else {
                for &s in &b.sons {
                    rec(bt, s, lists);
                }
            }
        }
        rec(bt, bt.root(), &mut lists);
        Self { lists, built_for: bt.id() }
    }

    pub fn list(&self, row_cluster: usize) -> &[RowEntry] {
        &self.lists[row_cluster]
    }

    pub fn lists(&self) -> &[Vec<RowEntry>] {
        &self.lists
    }

    pub fn built_for(&self) -> u64 {
        self.built_for
    }

    pub fn total_entries(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    /// `C_sp`: the longest list.
    pub fn sparsity_constant(&self) -> usize {
        self.lists.iter().map(Vec::len).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fibonacci_sphere, line_points, PointCloud};

    fn unit_cube(offset: f64) -> BoundingBox {
        BoundingBox::new([offset; 3], [offset + 1.0; 3])
    }

    #[test]
    fn admissibility_cases() {
        let a = unit_cube(0.0);
        let b = unit_cube(4.0);
        assert!(!admissible(&a, &a, 100.0));
        assert!(admissible(&a, &b, 2.0));
        assert!(!admissible(&a, &b, 0.1));
        let p = BoundingBox::new([1.0; 3], [1.0; 3]);
        assert!(!admissible(&p, &p, 2.0));
    }

    #[test]
    fn single_leaf_trees() {
        let cloud = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let t = ClusterTree::build(&cloud, 4).unwrap();
        let bt = BlockTree::build(&t, &t, 2.0);
        assert_eq!(bt.blocks().len(), 1);
        assert_eq!(bt.block(0).kind, BlockKind::Inadmissible { index: 0 });
        let rl = RowLists::prepare(&bt, t.len());
        assert_eq!(rl.total_entries(), 1);
        assert_eq!(rl.sparsity_constant(), 1);

        let far = PointCloud::new(vec![[10.0, 0.0, 0.0], [11.0, 0.0, 0.0]]).unwrap();
        let s = ClusterTree::build(&far, 4).unwrap();
        let bt = BlockTree::build(&t, &s, 2.0);
        assert_eq!(bt.block(0).kind, BlockKind::Admissible { index: 0 });
    }

    fn check_partition(rows: &ClusterTree, cols: &ClusterTree, bt: &BlockTree) {
        let (n, m) = (rows.n(), cols.n());
        let mut hit = vec![0u8; n * m];
        let mut area = 0usize;
        for b in bt.blocks().iter().filter(|b| b.is_leaf()) {
            area += rows.cluster(b.row).size() * cols.cluster(b.col).size();
            for &i in rows.label(b.row) {
                for &j in cols.label(b.col) {
                    hit[i * m + j] += 1;
                }
            }
        }
        assert_eq!(area, n * m);
        assert!(hit.iter().all(|&h| h == 1));
    }

    fn check_son_rule(rows: &ClusterTree, cols: &ClusterTree, bt: &BlockTree) {
        for b in bt.blocks() {
            assert_eq!(b.kind == BlockKind::Subdivided, !b.sons.is_empty());
            if b.sons.is_empty() {
                continue;
            }
            let (ct, cs) = (rows.cluster(b.row), cols.cluster(b.col));
            let mut expected: Vec<(usize, usize)> = match (ct.is_leaf(), cs.is_leaf()) {
                (true, false) => cs.sons.iter().map(|&s| (b.row, s)).collect(),
                (false, true) => ct.sons.iter().map(|&t| (t, b.col)).collect(),
                (false, false) => ct
                    .sons
                    .iter()
                    .flat_map(|&t| cs.sons.iter().map(move |&s| (t, s)))
                    .collect(),
                (true, true) => panic!("leaf pair was subdivided"),
            };
            let mut actual: Vec<(usize, usize)> =
                b.sons.iter().map(|&s| (bt.block(s).row, bt.block(s).col)).collect();
            expected.sort_unstable();
            actual.sort_unstable();
            assert_eq!(actual, expected);
        }
    }

    #[test]
    fn sphere_block_tree_partitions_product() {
        let cloud = fibonacci_sphere(512, 1.0).unwrap();
        let t = ClusterTree::build(&cloud, 32).unwrap();
        let bt = BlockTree::build(&t, &t, 2.0);
        check_partition(&t, &t, &bt);
        check_son_rule(&t, &t, &bt);
        assert!(bt.counts().admissible > 0);
        let rl = RowLists::prepare(&bt, t.len());
        assert_eq!(rl.total_entries(), bt.leaf_count());
        let mut blocks: Vec<usize> =
            rl.lists().iter().flatten().map(|e| e.block).collect();
        blocks.sort_unstable();
        blocks.dedup();
        assert_eq!(blocks.len(), bt.leaf_count());
    }

    #[test]
    fn asymmetric_trees_follow_son_rule() {
        let a = fibonacci_sphere(300, 1.0).unwrap();
        let b = line_points(77, 3.0).unwrap();
        let ta = ClusterTree::build(&a, 8).unwrap();
        let tb = ClusterTree::build(&b, 20).unwrap();
        let bt = BlockTree::build(&ta, &tb, 1.0);
        check_partition(&ta, &tb, &bt);
        check_son_rule(&ta, &tb, &bt);
    }

    #[test]
    fn line_geometry_sparsity_constant_matches_brute_force() {
        let cloud = line_points(64, 1.0).unwrap();
        let t = ClusterTree::build(&cloud, 8).unwrap();
        let bt = BlockTree::build(&t, &t, 1.0);
        let rl = RowLists::prepare(&bt, t.len());
        let brute = (0..t.len())
            .map(|r| bt.blocks().iter().filter(|b| b.is_leaf() && b.row == r).count())
            .max()
            .unwrap();
        assert_eq!(rl.sparsity_constant(), brute);
    }

    #[test]
    fn sparsity_constant_is_deterministic() {
        let cloud = fibonacci_sphere(2048, 1.0).unwrap();
        let build = || {
            let t = ClusterTree::build(&cloud, 32).unwrap();
            let bt = BlockTree::build(&t, &t, 2.0);
            RowLists::prepare(&bt, t.len()).sparsity_constant()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn admissible_coverage_grows_with_eta() {
        let cloud = fibonacci_sphere(1024, 1.0).unwrap();
        let t = ClusterTree::build(&cloud, 16).unwrap();
        let coverage: Vec<usize> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&eta| {
                let bt = BlockTree::build(&t, &t, eta);
                bt.admissible_leaves()
                    .iter()
                    .map(|&b| {
                        let b = bt.block(b);
                        t.cluster(b.row).size() * t.cluster(b.col).size()
                    })
                    .sum()
            })
            .collect();
        assert!(coverage.windows(2).all(|w| w[0] <= w[1]), "{coverage:?}");
    }
}
