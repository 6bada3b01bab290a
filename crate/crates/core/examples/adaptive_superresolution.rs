//! The full adaptive loop on a simulated 40×40 image of five peaks, with the
//! mesh history printed per iteration and the result scored against truth.

use peakforge::adapt::{run_adaptive_with, AdaptConfig};
use peakforge::forward::{GroundTruth, ObservationSet, Peak};
use peakforge::kernels::{Kernel, Normalization};
use peakforge::mesh::{BoxDomain, Mesh};
use peakforge::metrics::{compare, MassMode};
use peakforge::solver::DataTerm;

fn main() -> peakforge::Result<()> {
    let dom = BoxDomain::unit(2);
    let m = 40;
    let hm = 1.0 / m as f64;
    let kernel = Kernel::mixture(2, 0.2, 2.0 * hm, 2.5 * hm, Normalization::UnitPeak)?;
    let truth = GroundTruth::new(
        vec![
            Peak::new([0.195, 0.58], 1.0),
            Peak::new([0.18, 0.72], 1.5),
            Peak::new([0.48, 0.46], 1.0),
            Peak::new([0.72, 0.38], 1.0),
            Peak::new([0.64, 0.36], 1.2),
        ],
        &dom,
    )?;
    let obs = ObservationSet::simulate(&truth, &kernel, &dom, m, 40.0, 1)?;
    let data = DataTerm::Sampled { obs, kernel };
    let cfg = AdaptConfig { h_min: 0.25 * hm, ..Default::default() };

    let result = run_adaptive_with(&data, &Mesh::uniform(&dom, &[15, 15])?, &cfg, |rec, _, _| {
        println!(
            "m = {}: {:4} nodes, {:3} active, {} clusters, +{} nodes",
            rec.generation, rec.node_count, rec.active_node_count, rec.cluster_count, rec.inserted_node_count
        );
        Ok(())
    })?;
    for p in &result.peaks {
        println!("({:.4}, {:.4})  γ̂ = {:.3}", p.location[0], p.location[1], p.amplitude);
    }
    let c = compare(&truth, &result.peaks, MassMode::UnitNormalized);
    println!("MLE {:.4}  MSE {:.4}  EMD {:.4}", c.mle, c.mse, c.emd);
    Ok(())
}
