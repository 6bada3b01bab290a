//! The optimality function p(x), its clamp q^N and overshoot r^N for a
//! single off-grid peak, how sup|r^N| falls with the grid size, and both
//! sides of the a-posteriori estimate.

use peakforge::diagnostics::{aposteriori, continuum_minimiser_single_peak, sup_r_scan, OptimalityField};
use peakforge::forward::{GroundTruth, Peak};
use peakforge::kernels::{Kernel, Normalization};
use peakforge::mesh::{BoxDomain, Mesh};
use peakforge::solver::{solve_lasso, Gram, SolverOptions};

fn main() -> peakforge::Result<()> {
    let dom = BoxDomain::unit(1);
    let kernel = Kernel::gaussian(1, 0.1, Normalization::UnitPeak)?;
    let auto = kernel.autocorrelation();
    let truth = GroundTruth::new(vec![Peak::new([0.5], 1.0)], &dom)?;
    let opts = SolverOptions::default();

    let mesh = Mesh::uniform(&dom, &[8])?;
    let gram = Gram::continuum(&auto, mesh.coords(), &truth)?;
    let sol = solve_lasso(&gram, 0.1 * gram.lambda_max(), &opts, None)?;
    let field = OptimalityField::continuum(&truth, &auto, &mesh, &sol)?;
    for x in [0.40, 0.45, 0.5, 0.55, 0.60] {
        let s = field.sample(&[x])?;
        println!("x = {x:.2}: p = {:+.4}  q = {:+.4}  r = {:+.4}", s.p, s.q, s.r);
    }

    for pt in sup_r_scan(&truth, &kernel, &[8, 16, 32, 64, 128], 0.1, &opts)? {
        println!("N = {:3}: sup r = {:.3e}", pt.n, pt.sup_r);
    }

    let reference = continuum_minimiser_single_peak(&truth, &auto, sol.lambda)?;
    let rep = aposteriori(&field, &reference, &mesh)?;
    println!("fidelity {:.3e} ≤ bound {:.3e}", rep.fidelity, rep.bound);
    Ok(())
}
