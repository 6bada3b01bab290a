//! Plain LASSO shrinks an on-grid peak to γ − λ/H(0); reweighting the
//! penalty by the previous solution removes most of that bias.

use peakforge::forward::{GroundTruth, Peak};
use peakforge::kernels::{Kernel, Normalization};
use peakforge::mesh::{BoxDomain, Mesh};
use peakforge::solver::{solve_hal, solve_lasso, Gram, SolverOptions};

fn main() -> peakforge::Result<()> {
    let dom = BoxDomain::unit(1);
    let auto = Kernel::gaussian(1, 0.05, Normalization::UnitPeak)?.autocorrelation();
    let mesh = Mesh::uniform(&dom, &[21])?;
    let truth = GroundTruth::new(vec![Peak::new([0.5], 1.0)], &dom)?;
    let gram = Gram::continuum(&auto, mesh.coords(), &truth)?;
    let lambda = 0.1 * gram.lambda_max();
    let opts = SolverOptions::default();
    let k = mesh.nearest_node(&[0.5]).unwrap();

    let lasso = solve_lasso(&gram, lambda, &opts, None)?;
    println!("LASSO      c_K = {:.6} (closed form {:.6})", lasso.coefficients[k], 1.0 - lambda / auto.h0());
    for rounds in [2, 3, 5] {
        let hal = solve_hal(&gram, lambda, rounds, &opts, None)?;
        println!("HAL r = {rounds}  c_K = {:.6}", hal.coefficients[k]);
    }
    Ok(())
}
