//! Four peaks on a 20×20 grid; clusters of up to four nodes are resolved to
//! sub-grid positions through the Hessian of H at zero.

use peakforge::adapt::recover_clusters;
use peakforge::forward::{GroundTruth, Peak};
use peakforge::kernels::{Kernel, Normalization};
use peakforge::mesh::{BoxDomain, Mesh};
use peakforge::solver::{solve_lasso, DataTerm, SolverOptions};

fn main() -> peakforge::Result<()> {
    let dom = BoxDomain::unit(2);
    let kernel = Kernel::gaussian(2, 0.13, Normalization::UnitPeak)?;
    let truth = GroundTruth::new(
        vec![
            Peak::new([0.22, 0.10], 1.0),
            Peak::new([0.66, 0.16], 1.0),
            Peak::new([0.53, 0.85], 1.0),
            Peak::new([0.25, 0.40], 1.0),
        ],
        &dom,
    )?;
    let mesh = Mesh::uniform(&dom, &[20, 20])?;
    let data = DataTerm::Continuum { truth, kernel };
    let gram = data.gram(&mesh)?;
    let sol = solve_lasso(&gram, 1e-3 * gram.lambda_max(), &SolverOptions { nonneg: true, ..Default::default() }, None)?;
    let rec = recover_clusters(&mesh, &sol, &data.recovery_kernel(), 0.005, Default::default())?;
    for p in &rec.peaks {
        println!("({:.4}, {:.4})  γ̂ = {:.3}  [{} nodes]", p.location[0], p.location[1], p.amplitude, p.support_size);
    }
    Ok(())
}
