//! One refinement step by hand: keep the elements around active nodes,
//! split them into clusters, insert centroids and write the new mesh.

use peakforge::mesh::{BoxDomain, Mesh, RefineOptions};

fn main() -> peakforge::Result<()> {
    let mesh = Mesh::uniform(&BoxDomain::unit(2), &[11, 11])?;
    // two separated groups of "nonzero" nodes
    let active: Vec<usize> = vec![2 + 11 * 2, 3 + 11 * 2, 7 + 11 * 8, 8 + 11 * 8, 7 + 11 * 9];
    let pruned = mesh.prune(&active);
    let clusters = pruned.mesh.clusters();
    println!("{} elements kept in {} clusters", pruned.mesh.num_elements(), clusters.len());

    let refined = pruned.mesh.refine(&clusters, RefineOptions::new(2, 0.01))?;
    println!(
        "refined: {} nodes, {} elements, {} inserted, area {:.4} (was {:.4})",
        refined.mesh.num_nodes(),
        refined.mesh.num_elements(),
        refined.inserted,
        refined.mesh.total_measure(),
        pruned.mesh.total_measure()
    );
    let json = refined.mesh.to_json()?;
    assert_eq!(Mesh::from_json(&json)?.num_nodes(), refined.mesh.num_nodes());
    Ok(())
}
