//! Point-spread kernels G and their closed-form autocorrelation H = G ⋆ G,
//! checked against a midpoint-rule quadrature.

use peakforge::kernels::{Kernel, Normalization};

fn main() -> peakforge::Result<()> {
    let g = Kernel::mixture(1, 0.2, 0.05, 0.0625, Normalization::UnitPeak)?;
    let h = g.autocorrelation();
    println!("G(0) = {:.4}, H(0) = {:.6}, H''(0) = {:.4}", g.peak(), h.h0(), h.curvature_at_zero());

    let (a, b, n) = (-1.0, 1.0, 20_000);
    let dy = (b - a) / n as f64;
    for x in [0.0, 0.03, 0.1, 0.2] {
        let quad: f64 = (0..n)
            .map(|i| {
                let y = a + (i as f64 + 0.5) * dy;
                g.eval_sq(y * y) * g.eval_sq((y - x) * (y - x)) * dy
            })
            .sum();
        println!("x = {x:<5} H = {:.10}  quadrature = {:.10}", h.eval(&[x])?, quad);
    }
    Ok(())
}
