//! Cluster trees built by recursive median bisection.
//!
//! Clusters are stored in a flat arena numbered in pre-order, so every subtree
//! occupies the contiguous id range `id..id + subtree_len`. The parallel tree
//! traversals rely on this to hand out disjoint mutable slices per subtree.

use std::ops::Range;

use crate::error::{H2Error, Result};
use crate::geometry::{BoundingBox, PointCloud};

pub const DEFAULT_LEAF_SIZE: usize = 32;

#[derive(Clone, Debug)]
pub struct Cluster {
    /// Position of this cluster's label inside the tree permutation.
    pub range: Range<usize>,
    /// Ids of the sons: empty for leaves, two entries otherwise.
    pub sons: Vec<usize>,
    pub bbox: BoundingBox,
    pub level: usize,
    /// Number of clusters in the subtree rooted here, including itself.
    pub subtree_len: usize,
    pub parent: Option<usize>,
}

impl Cluster {
    pub fn is_leaf(&self) -> bool {
        self.sons.is_empty()
    }

    pub fn size(&self) -> usize {
        self.range.len()
    }
}

#[derive(Clone, Debug)]
pub struct ClusterTree {
    clusters: Vec<Cluster>,
    permutation: Vec<usize>,
    leaf_size: usize,
}

struct Node {
    range: Range<usize>,
    bbox: BoundingBox,
    sons: Vec<Node>,
}

impl ClusterTree {
    /// Splits the longest bounding-box axis at the median until clusters hold at
    /// most `leaf_size` points. Coordinate ties are ordered by original index.
    pub fn build(cloud: &PointCloud, leaf_size: usize) -> Result<Self> {
        if cloud.is_empty() {
            return Err(H2Error::EmptyInput("cannot build a cluster tree over an empty cloud"));
        }
        if leaf_size == 0 {
            return Err(H2Error::InvalidParameter("leaf_size must be at least 1".into()));
        }
        let mut permutation: Vec<usize> = (0..cloud.len()).collect();
        let root = split(cloud, &mut permutation, 0, leaf_size);
        let mut clusters = Vec::new();
        flatten(root, None, 0, &mut clusters);
        Ok(Self {
            clusters,
            permutation,
            leaf_size,
        })
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Number of indices in the root label.
    pub fn n(&self) -> usize {
        self.permutation.len()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn cluster(&self, id: usize) -> &Cluster {
        &self.clusters[id]
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Maps tree-ordered positions to original indices.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Original indices forming the label of cluster `id`.
    pub fn label(&self, id: usize) -> &[usize] {
        &self.permutation[self.clusters[id].range.clone()]
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&id| self.clusters[id].is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.clusters.iter().map(|c| c.level).max().unwrap_or(0)
    }

    /// Number of clusters on each level.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.depth() + 1];
        for c in &self.clusters {
            counts[c.level] += 1;
        }
        counts
    }
}

fn split(cloud: &PointCloud, idx: &mut [usize], offset: usize, leaf_size: usize) -> Node {
    let pts = cloud.points();
    let bbox = BoundingBox::of_points(idx.iter().map(|&i| &pts[i]));
    let range = offset..offset + idx.len();
    if idx.len() <= leaf_size {
        return Node { range, bbox, sons: Vec::new() };
    }
    if bbox.diam() == 0.0 {
        log::warn!(
            "{} coincident points cannot be split; keeping an oversized leaf",
            idx.len()
        );
        return Node { range, bbox, sons: Vec::new() };
    }
    let axis = bbox.longest_axis();
    idx.sort_unstable_by(|&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
    let mid = idx.len() / 2;
    let (left, right) = idx.split_at_mut(mid);
    let (l, r) = rayon::join(
        || split(cloud, left, offset, leaf_size),
        || split(cloud, right, offset + mid, leaf_size),
    );
    Node { range, bbox, sons: vec![l, r] }
}

fn flatten(node: Node, parent: Option<usize>, level: usize, out: &mut Vec<Cluster>) -> usize {
    let id = out.len();
    out.push(Cluster {
        range: node.range,
        sons: Vec::new(),
        bbox: node.bbox,
        level,
        subtree_len: 1,
        parent,
    });
    let mut sons = Vec::with_capacity(node.sons.len());
    for son in node.sons {
        sons.push(flatten(son, Some(id), level + 1, out));
    }
    out[id].subtree_len = out.len() - id;
    out[id].sons = sons;
    id
}
