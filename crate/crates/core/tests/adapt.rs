use std::path::PathBuf;

use peakforge::adapt::{active_set, run_adaptive, AdaptConfig, AdaptResult};
use peakforge::config::ExperimentConfig;
use peakforge::forward::{GroundTruth, Peak};
use peakforge::kernels::{Kernel, Normalization};
use peakforge::mesh::{BoxDomain, Mesh};
use peakforge::solver::{DataTerm, SolverOptions, SparseSolution};

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.toml"))).unwrap()
}

fn run(cfg: &ExperimentConfig) -> AdaptResult {
    run_adaptive(&cfg.data_term().unwrap(), &cfg.initial_mesh().unwrap(), &cfg.adapt_config().unwrap()).unwrap()
}

fn continuum_1d(peaks: &[(f64, f64)], counts: usize) -> (DataTerm, Mesh, AdaptConfig) {
    let dom = BoxDomain::unit(1);
    let truth = GroundTruth::new(peaks.iter().map(|&(x, a)| Peak::new(vec![x], a)).collect(), &dom).unwrap();
    let kernel = Kernel::gaussian(1, 0.05, Normalization::UnitPeak).unwrap();
    let mesh = Mesh::uniform(&dom, &[counts]).unwrap();
    let h = 1.0 / (counts - 1) as f64;
    let cfg = AdaptConfig {
        lambda_fraction: 0.05,
        h_min: 0.25 * h,
        solver_options: SolverOptions { nonneg: true, ..Default::default() },
        ..Default::default()
    };
    (DataTerm::Continuum { truth, kernel }, mesh, cfg)
}

fn check_invariants(name: &str, res: &AdaptResult, max_iterations: usize) {
    let its = &res.trace.iterations;
    assert!(res.trace.converged, "{name} did not settle");
    assert!(its.len() <= max_iterations, "{name}: {} iterations", its.len());
    for w in its.windows(2) {
        assert!(w[1].measure <= w[0].measure + 1e-12, "{name}: measure grew {} → {}", w[0].measure, w[1].measure);
    }
    // every active node lands in exactly one single-signed peak
    let active = active_set(&res.solution, 0.005);
    for sign in [1i8, -1] {
        let nodes = active.iter().filter(|&&k| res.solution.coefficients[k].signum() as i8 == sign).count();
        let covered: usize = res.peaks.iter().filter(|p| p.sign == sign).map(|p| p.support_size).sum();
        assert_eq!(nodes, covered, "{name}: sign {sign}");
    }
}

#[test]
fn shipped_adaptive_configs_settle() {
    for name in ["table3", "table4", "fig11_dense"] {
        let cfg = config(name);
        let res = run(&cfg);
        check_invariants(name, &res, cfg.adapt.max_iterations);
    }
}

#[test]
fn identical_inputs_identical_trace() {
    let cfg = config("table4");
    let (a, b) = (run(&cfg), run(&cfg));
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.peaks, b.peaks);
    let bits = |s: &SparseSolution| s.coefficients.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.solution), bits(&b.solution));
}

#[test]
fn opposite_signs_stay_apart() {
    let cfg = config("table4");
    let res = run(&cfg);
    assert!(res.peaks.iter().any(|p| p.sign < 0) && res.peaks.iter().any(|p| p.sign > 0));
    assert!(res.peaks.iter().all(|p| p.amplitude.signum() as i8 == p.sign));
}

#[test]
fn on_grid_peak_is_found_in_one_step() {
    let (data, mesh, cfg) = continuum_1d(&[(0.4, 1.0)], 21);
    let res = run_adaptive(&data, &mesh, &cfg).unwrap();
    assert_eq!(res.peaks.len(), 1);
    assert!((res.peaks[0].location[0] - 0.4).abs() < 1e-9, "{:?}", res.peaks[0]);
    assert_eq!(res.peaks[0].support_size, 1);
    check_invariants("on-grid", &res, cfg.max_iterations);
}

#[test]
fn separated_peaks_become_separate_clusters() {
    let truth = [(0.3137, 1.0), (0.6921, 0.6)];
    let (data, mesh, cfg) = continuum_1d(&truth, 16);
    let res = run_adaptive(&data, &mesh, &cfg).unwrap();
    assert_eq!(res.peaks.len(), 2);
    let mut peaks = res.peaks.clone();
    peaks.sort_by(|a, b| a.location[0].total_cmp(&b.location[0]));
    for (p, (x, _)) in peaks.iter().zip(truth) {
        assert!((p.location[0] - x).abs() < 2e-3, "{:?} vs {x}", p);
    }
    check_invariants("two peaks", &res, cfg.max_iterations);
}
