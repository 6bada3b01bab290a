use peakforge::kernels::{Kernel, Normalization};
use proptest::prelude::*;

fn kernels(dim: usize) -> Vec<Kernel> {
    vec![
        Kernel::gaussian(dim, 0.03, Normalization::UnitPeak).unwrap(),
        Kernel::gaussian(dim, 0.13, Normalization::UnitMass).unwrap(),
        Kernel::mixture(dim, 0.2, 0.05, 0.0625, Normalization::UnitPeak).unwrap(),
        Kernel::mixture(dim, 0.7, 0.025, 0.03125, Normalization::UnitMass).unwrap(),
    ]
}

proptest! {
    #[test]
    fn even_in_x(x in -0.5f64..0.5, y in -0.5f64..0.5) {
        for (dim, p) in [(1, vec![x]), (2, vec![x, y])] {
            let m: Vec<f64> = p.iter().map(|v| -v).collect();
            for k in kernels(dim) {
                let h = k.autocorrelation();
                prop_assert!((k.eval(&p).unwrap() - k.eval(&m).unwrap()).abs() <= 1e-12 * k.peak());
                prop_assert!((h.eval(&p).unwrap() - h.eval(&m).unwrap()).abs() <= 1e-12 * h.h0());
            }
        }
    }

    #[test]
    fn autocorrelation_peaks_at_origin(r in 1e-6f64..1.0, theta in 0.0f64..std::f64::consts::TAU) {
        for k in kernels(2) {
            let h = k.autocorrelation();
            let x = [r * k.width() * theta.cos(), r * k.width() * theta.sin()];
            prop_assert!(h.eval(&x).unwrap() < h.h0());
        }
        for k in kernels(1) {
            let h = k.autocorrelation();
            prop_assert!(h.eval(&[r * k.width()]).unwrap() < h.h0());
        }
    }

    #[test]
    fn hessian_matches_finite_differences(dim in 1usize..=2, which in 0usize..4) {
        let k = &kernels(dim)[which];
        // work in units where the kernel width is O(1) so the fixed step resolves it
        let scale = 1.0 / k.width();
        let h = k.autocorrelation();
        let hess = h.hessian_at_zero();
        let step = 1e-4;
        let f = |x: &[f64]| {
            let y: Vec<f64> = x.iter().map(|v| v / scale).collect();
            h.eval(&y).unwrap() / h.h0()
        };
        for i in 0..dim {
            let mut e = vec![0.0; dim];
            e[i] = step;
            let m: Vec<f64> = e.iter().map(|v| -v).collect();
            let fd = (f(&e) - 2.0 * f(&vec![0.0; dim]) + f(&m)) / (step * step);
            let exact = hess[(i, i)] / (h.h0() * scale * scale);
            prop_assert!((fd - exact).abs() <= 1e-5, "fd {fd} vs {exact}");
        }
    }
}

#[test]
fn unit_mass_standard_gaussian_curvature() {
    // H is a Gaussian of variance 2, so H''(0) = −H(0)/2
    let h = Kernel::gaussian(1, 1.0, Normalization::UnitMass).unwrap().autocorrelation();
    let expected = -h.h0() / 2.0;
    assert!((h.hessian_at_zero()[(0, 0)] - expected).abs() < 1e-14);
    assert!((h.curvature_at_zero() - expected).abs() < 1e-14);
}

#[test]
fn unit_mass_h0_matches_quadrature() {
    // H(0) = ∫ G² — midpoint rule over ±12σ
    let sigma = 0.2;
    let g = Kernel::gaussian(1, sigma, Normalization::UnitMass).unwrap();
    let n = 200_000;
    let a = 12.0 * sigma;
    let dx = 2.0 * a / n as f64;
    let q: f64 = (0..n)
        .map(|i| {
            let v = g.eval(&[-a + (i as f64 + 0.5) * dx]).unwrap();
            v * v * dx
        })
        .sum();
    assert!((g.autocorrelation().h0() - q).abs() < 1e-8);
}

#[test]
fn mixture_autocorrelation_is_negative_definite_at_origin() {
    let k = Kernel::mixture(2, 0.2, 0.05, 0.0625, Normalization::UnitPeak).unwrap();
    let h = k.autocorrelation();
    assert_eq!(h.terms().len(), 3);
    let eig = h.hessian_at_zero().symmetric_eigenvalues();
    assert!(eig.iter().all(|&l| l < 0.0), "{eig:?}");
}

#[test]
fn autocorrelation_matches_numerical_convolution_2d() {
    let k = Kernel::mixture(2, 0.3, 0.1, 0.15, Normalization::UnitMass).unwrap();
    let h = k.autocorrelation();
    let n = 240;
    let a = 1.2;
    let dx = 2.0 * a / n as f64;
    for x in [[0.0, 0.0], [0.05, -0.02], [0.12, 0.1]] {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let y = [-a + (i as f64 + 0.5) * dx, -a + (j as f64 + 0.5) * dx];
                s += k.eval(&y).unwrap() * k.eval(&[y[0] - x[0], y[1] - x[1]]).unwrap() * dx * dx;
            }
        }
        let exact = h.eval(&x).unwrap();
        assert!(((s - exact) / exact).abs() < 1e-6, "{s} vs {exact}");
    }
}
