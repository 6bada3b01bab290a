use peakforge::forward::{GroundTruth, Peak};
use peakforge::metrics::{compare, earth_mover_distance, mean_localization_error, mean_strength_error, MassMode};
use peakforge::recovery::RecoveredPeak;
use proptest::prelude::*;

type Pts = Vec<(f64, f64, f64)>;

fn points(max: usize) -> impl Strategy<Value = Pts> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.2f64..2.0), 1..=max)
}

fn truth(p: &Pts) -> GroundTruth {
    // built directly: random draws may coincide, which the validated
    // constructor rightly refuses
    GroundTruth {
        peaks: p.iter().map(|&(x, y, a)| Peak::new(vec![x, y], a)).collect(),
    }
}

fn estimate(p: &Pts) -> Vec<RecoveredPeak> {
    p.iter()
        .enumerate()
        .map(|(i, &(x, y, a))| RecoveredPeak {
            location: vec![x, y],
            amplitude: a,
            cluster_id: i,
            support_size: 1,
            sign: 1,
        })
        .collect()
}

fn dist(a: &(f64, f64, f64), b: &(f64, f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

proptest! {
    #[test]
    fn scores_are_nonnegative_and_vanish_on_identity(a in points(6), b in points(6)) {
        let c = compare(&truth(&a), &estimate(&b), MassMode::UnitNormalized);
        prop_assert!(c.mle >= 0.0 && c.mse >= 0.0 && c.emd >= 0.0);
        let same = compare(&truth(&a), &estimate(&a), MassMode::UnitNormalized);
        prop_assert_eq!((same.mle, same.mse), (0.0, 0.0));
        prop_assert!(same.emd.abs() < 1e-12);
        prop_assert!(earth_mover_distance(&truth(&a), &estimate(&a), MassMode::AmplitudeWeighted).abs() < 1e-12);
    }

    #[test]
    fn emd_triangle_inequality(a in points(5), b in points(5), c in points(5)) {
        let d = |x: &Pts, y: &Pts| earth_mover_distance(&truth(x), &estimate(y), MassMode::UnitNormalized);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }

    #[test]
    fn emd_is_the_best_assignment(
        (a, b) in (1usize..=6).prop_flat_map(|n| (
            prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, Just(1.0)), n),
            prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, Just(1.0)), n),
        ))
    ) {
        let n = a.len();
        let best = permutations(n)
            .iter()
            .map(|p| (0..n).map(|i| dist(&a[i], &b[p[i]])).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let emd = earth_mover_distance(&truth(&a), &estimate(&b), MassMode::UnitNormalized);
        prop_assert!((emd - best / n as f64).abs() < 1e-9, "{emd} vs {}", best / n as f64);
    }

    #[test]
    fn orderings_do_not_matter(a in points(6), b in points(6), rot in 0usize..6) {
        let (t, e) = (truth(&a), estimate(&b));
        let mut shuffled_e = e.clone();
        let r = rot % shuffled_e.len();
        shuffled_e.rotate_left(r);
        prop_assert!((mean_localization_error(&t, &e) - mean_localization_error(&t, &shuffled_e)).abs() < 1e-12);
        let mut shuffled_t = t.clone();
        let r = rot % shuffled_t.peaks.len();
        shuffled_t.peaks.rotate_left(r);
        prop_assert!((mean_strength_error(&t, &e) - mean_strength_error(&shuffled_t, &e)).abs() < 1e-12);
    }
}

#[test]
fn hand_computed_pair() {
    // truth at (0,0) and (1,0); estimates at (0.1,0) with 0.5 and (1,0.2) with 2
    let t = truth(&vec![(0.0, 0.0, 1.0), (1.0, 0.0, 1.0)]);
    let e = estimate(&vec![(0.1, 0.0, 0.5), (1.0, 0.2, 2.0)]);
    assert!((mean_localization_error(&t, &e) - 0.15).abs() < 1e-12);
    // absolute amplitude errors 0.5 and 1, averaged
    assert!((mean_strength_error(&t, &e) - 0.75).abs() < 1e-12);
}
