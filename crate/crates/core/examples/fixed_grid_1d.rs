//! Three peaks on a coarse and a fine 1D grid: solve the LASSO on exact data
//! and turn each cluster of nonzeros into one off-grid peak.

use peakforge::adapt::recover_clusters;
use peakforge::forward::{GroundTruth, Peak};
use peakforge::kernels::{Kernel, Normalization};
use peakforge::mesh::{BoxDomain, Mesh};
use peakforge::solver::{solve_lasso, DataTerm, SolverOptions};

fn main() -> peakforge::Result<()> {
    let dom = BoxDomain::unit(1);
    let kernel = Kernel::gaussian(1, 0.03, Normalization::UnitPeak)?;
    let truth = GroundTruth::new(vec![Peak::new([0.23], 0.5), Peak::new([0.58], 0.9), Peak::new([0.83], 0.7)], &dom)?;
    let data = DataTerm::Continuum { truth, kernel };
    let opts = SolverOptions { nonneg: true, ..Default::default() };
    for n in [16, 51] {
        let mesh = Mesh::uniform(&dom, &[n])?;
        let gram = data.gram(&mesh)?;
        let sol = solve_lasso(&gram, 0.01 * gram.lambda_max(), &opts, None)?;
        println!("N = {n}: {} sweeps, KKT residual {:.1e}", sol.iterations, sol.kkt_residual);
        for k in sol.support() {
            println!("    c[{:.4}] = {:.4}", mesh.node(k)[0], sol.coefficients[k]);
        }
        for p in recover_clusters(&mesh, &sol, &data.recovery_kernel(), 0.005, Default::default())?.peaks {
            println!("  peak at {:.4}, amplitude {:.3} from {} node(s)", p.location[0], p.amplitude, p.support_size);
        }
    }
    Ok(())
}
