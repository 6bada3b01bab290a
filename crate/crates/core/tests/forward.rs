use peakforge::forward::{measurement_points, GroundTruth, ObservationSet, OperatorMatrix, Peak};
use peakforge::kernels::{Kernel, Normalization};
use peakforge::mesh::{BoxDomain, Mesh};
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn table3_truth() -> GroundTruth {
    let peaks = [((0.195, 0.58), 1.0), ((0.18, 0.72), 1.5), ((0.48, 0.46), 1.0), ((0.72, 0.38), 1.0), ((0.64, 0.36), 1.2)];
    GroundTruth::new(peaks.iter().map(|&((x, y), a)| Peak::new(vec![x, y], a)).collect(), &BoxDomain::unit(2)).unwrap()
}

fn mixture() -> Kernel {
    Kernel::mixture(2, 0.2, 0.05, 0.0625, Normalization::UnitPeak).unwrap()
}

#[test]
fn requested_snr_is_reproduced() {
    let obs = ObservationSet::simulate(&table3_truth(), &mixture(), &BoxDomain::unit(2), 40, 40.0, 1).unwrap();
    assert_eq!(obs.len(), 1600);
    assert!((obs.achieved_snr_db() - 40.0).abs() < 0.1, "{}", obs.achieved_snr_db());
}

#[test]
fn same_seed_same_bits() {
    let a = ObservationSet::simulate(&table3_truth(), &mixture(), &BoxDomain::unit(2), 40, 20.0, 9).unwrap();
    let b = ObservationSet::simulate(&table3_truth(), &mixture(), &BoxDomain::unit(2), 40, 20.0, 9).unwrap();
    let c = ObservationSet::simulate(&table3_truth(), &mixture(), &BoxDomain::unit(2), 40, 20.0, 10).unwrap();
    let bits = |o: &ObservationSet| o.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn noiseless_has_zero_noise() {
    let obs = ObservationSet::simulate(&table3_truth(), &mixture(), &BoxDomain::unit(2), 20, f64::INFINITY, 3).unwrap();
    assert!(obs.noise.iter().all(|&e| e == 0.0));
    assert_eq!(obs.values, obs.clean());
}

#[test]
fn peak_on_a_pixel_centre_reads_one() {
    // M = 10 puts pixel centres at 0.05, 0.15, …
    let truth = GroundTruth::new(vec![Peak::new(vec![0.45, 0.65], 1.0)], &BoxDomain::unit(2)).unwrap();
    let obs = ObservationSet::simulate(&truth, &mixture(), &BoxDomain::unit(2), 10, f64::INFINITY, 0).unwrap();
    let max = obs.values.iter().cloned().fold(f64::MIN, f64::max);
    assert!((max - 1.0).abs() < 1e-15);
}

#[test]
fn binary_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let obs = ObservationSet::simulate(&table3_truth(), &mixture(), &BoxDomain::unit(2), 12, 30.0, 4).unwrap();
    let (bin, side) = (dir.path().join("o.bin"), dir.path().join("o.json"));
    obs.write_binary(&bin, &side).unwrap();
    let back = ObservationSet::read_binary(&bin, &side).unwrap();
    assert_eq!(back.values, obs.values);
    assert_eq!(back.points, obs.points);
    assert_eq!(back.info.seed, 4);
}

#[test]
fn operator_matches_naive_loop() {
    let k = mixture();
    let mesh = Mesh::uniform(&BoxDomain::unit(2), &[7, 5]).unwrap();
    let pts = measurement_points(&BoxDomain::unit(2), 9);
    let a = OperatorMatrix::assemble(&k, mesh.coords(), &pts).unwrap();
    assert_eq!((a.rows(), a.cols()), (81, 35));
    for (j, z) in pts.chunks(2).enumerate() {
        for (i, x) in mesh.nodes().enumerate() {
            let naive = k.eval(&[z[0] - x[0], z[1] - x[1]]).unwrap();
            assert!((a.matrix[(j, i)] - naive).abs() <= 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn adjoint_is_consistent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Kernel::gaussian(2, 0.1, Normalization::UnitMass).unwrap();
        let mesh = Mesh::uniform(&BoxDomain::unit(2), &[6, 6]).unwrap();
        let a = OperatorMatrix::assemble(&k, mesh.coords(), &measurement_points(&BoxDomain::unit(2), 8)).unwrap();
        let c: Vec<f64> = (0..a.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..a.rows()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = a.apply(&c).unwrap().iter().zip(&v).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.apply_transpose(&v).unwrap().iter().zip(&c).map(|(x, y)| x * y).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn forward_map_is_linear(g1 in -2.0f64..2.0, g2 in -2.0f64..2.0, x1 in 0.1f64..0.9, x2 in 0.1f64..0.9) {
        let dom = BoxDomain::unit(1);
        let k = Kernel::gaussian(1, 0.05, Normalization::UnitPeak).unwrap();
        let sim = |peaks: Vec<Peak>| ObservationSet::simulate(&GroundTruth::new(peaks, &dom).unwrap(), &k, &dom, 30, f64::INFINITY, 0).unwrap().values;
        let both = sim(vec![Peak::new(vec![x1], g1), Peak::new(vec![x2 + 1e-3], g2)]);
        let a = sim(vec![Peak::new(vec![x1], g1)]);
        let b = sim(vec![Peak::new(vec![x2 + 1e-3], g2)]);
        for i in 0..both.len() {
            prop_assert!((both[i] - a[i] - b[i]).abs() < 1e-12);
        }
    }
}
