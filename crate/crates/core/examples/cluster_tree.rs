//! Builds a point cloud on the unit sphere, saves it as CSV, reloads it and
//! prints the cluster and block tree structure.

use h2krylov::{fibonacci_sphere, BlockTree, ClusterTree, PointCloud};

fn main() -> h2krylov::Result<()> {
    let cloud = fibonacci_sphere(4096, 1.0)?;
    let path = std::env::temp_dir().join("h2krylov-sphere.csv");
    cloud.save(&path)?;
    let cloud = PointCloud::load(&path)?;
    println!("reloaded {} points from {}", cloud.len(), path.display());

    let tree = ClusterTree::build(&cloud, 32)?;
    println!("clusters {}  depth {}", tree.len(), tree.depth());
    println!("clusters per level {:?}", tree.level_counts());

    for eta in [0.5, 1.0, 2.0, 4.0] {
        let bt = BlockTree::build(&tree, &tree, eta);
        let c = bt.counts();
        println!("eta {eta:>3}: {:>5} admissible  {:>5} inadmissible  depth {}", c.admissible, c.inadmissible, bt.depth());
    }
    Ok(())
}
