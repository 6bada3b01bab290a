//! Peak-set validation metrics: mean localisation error, mean strength
//! error and the earth mover's distance.

use serde::{Deserialize, Serialize};

use crate::forward::GroundTruth;
use crate::mesh::dist;
use crate::recovery::RecoveredPeak;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassMode {
    /// Every point carries `1/n` of its side's mass.
    #[default]
    UnitNormalized,
    /// Masses proportional to `|γ|`, each side summing to one.
    AmplitudeWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mle: f64,
    pub mse: f64,
    pub emd: f64,
    /// `(true index, estimate index)` pairs used by MSE.
    pub matching: Vec<(usize, usize)>,
}

/// Index of the nearest estimate for each true peak (first on ties).
pub fn nearest_matching(truth: &GroundTruth, estimate: &[RecoveredPeak]) -> Vec<(usize, usize)> {
    if estimate.is_empty() {
        return Vec::new();
    }
    truth
        .peaks
        .iter()
        .enumerate()
        .map(|(l, p)| {
            let best = (0..estimate.len())
                .min_by(|&a, &b| dist(&p.location, &estimate[a].location).total_cmp(&dist(&p.location, &estimate[b].location)))
                .unwrap();
            (l, best)
        })
        .collect()
}

/// `(1/L) Σ_l min_l̂ ‖ξ_l − ξ̂_l̂‖`; `+∞` when nothing was recovered.
pub fn mean_localization_error(truth: &GroundTruth, estimate: &[RecoveredPeak]) -> f64 {
    if estimate.is_empty() || truth.is_empty() {
        log::warn!("MLE of an empty peak set is undefined");
        return f64::INFINITY;
    }
    let m = nearest_matching(truth, estimate);
    m.iter().map(|&(l, e)| dist(&truth.peaks[l].location, &estimate[e].location)).sum::<f64>() / truth.len() as f64
}

/// `(1/L) Σ_l |γ_l − γ̂_l̄|` with `l̄` the nearest estimate.
pub fn mean_strength_error(truth: &GroundTruth, estimate: &[RecoveredPeak]) -> f64 {
    if estimate.is_empty() || truth.is_empty() {
        log::warn!("MSE of an empty peak set is undefined");
        return f64::INFINITY;
    }
    let m = nearest_matching(truth, estimate);
    m.iter().map(|&(l, e)| (truth.peaks[l].amplitude - estimate[e].amplitude).abs()).sum::<f64>() / truth.len() as f64
}

pub fn earth_mover_distance(truth: &GroundTruth, estimate: &[RecoveredPeak], mode: MassMode) -> f64 {
    if estimate.is_empty() || truth.is_empty() {
        log::warn!("EMD of an empty peak set is undefined");
        return f64::INFINITY;
    }
    let masses = |amps: Vec<f64>| -> Vec<f64> {
        let n = amps.len() as f64;
        match mode {
            MassMode::UnitNormalized => vec![1.0 / n; amps.len()],
            MassMode::AmplitudeWeighted => {
                let t: f64 = amps.iter().map(|a| a.abs()).sum();
                amps.iter().map(|a| a.abs() / t).collect()
            }
        }
    };
    let a = masses(truth.peaks.iter().map(|p| p.amplitude).collect());
    let b = masses(estimate.iter().map(|p| p.amplitude).collect());
    let cost: Vec<Vec<f64>> = truth
        .peaks
        .iter()
        .map(|p| estimate.iter().map(|e| dist(&p.location, &e.location)).collect())
        .collect();
    transport_cost(&a, &b, &cost)
}

pub fn compare(truth: &GroundTruth, estimate: &[RecoveredPeak], mode: MassMode) -> Comparison {
    Comparison {
        mle: mean_localization_error(truth, estimate),
        mse: mean_strength_error(truth, estimate),
        emd: earth_mover_distance(truth, estimate, mode),
        matching: nearest_matching(truth, estimate),
    }
}

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Exact optimal transport between supplies `a` and demands `b` (equal
/// totals) by successive shortest paths with Bellman–Ford.
pub fn transport_cost(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let (src, sink) = (n + m, n + m + 1);
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m + 2];
    let mut add = |edges: &mut Vec<Edge>, u: usize, v: usize, cap: f64, c: f64| {
        adj[u].push(edges.len());
        edges.push(Edge { to: v, cap, cost: c });
        adj[v].push(edges.len());
        edges.push(Edge { to: u, cap: 0.0, cost: -c });
    };
    for (i, &ai) in a.iter().enumerate() {
        add(&mut edges, src, i, ai, 0.0);
    }
    for (i, row) in cost.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            add(&mut edges, i, n + j, f64::INFINITY, c);
        }
    }
    for (j, &bj) in b.iter().enumerate() {
        add(&mut edges, n + j, sink, bj, 0.0);
    }
    let total = a.iter().sum::<f64>().min(b.iter().sum());
    let eps = 1e-15 * total.max(1.0);
    let mut flow = 0.0;
    let mut result = 0.0;
    let nv = n + m + 2;
    while total - flow > eps {
        let mut d = vec![f64::INFINITY; nv];
        let mut via = vec![usize::MAX; nv];
        d[src] = 0.0;
        for _ in 0..nv {
            let mut changed = false;
            for u in 0..nv {
                if d[u].is_infinite() {
                    continue;
                }
                for &e in &adj[u] {
                    let ed = &edges[e];
                    if ed.cap > eps && d[u] + ed.cost < d[ed.to] - 1e-15 {
                        d[ed.to] = d[u] + ed.cost;
                        via[ed.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if d[sink].is_infinite() {
            break;
        }
        let mut push = total - flow;
        let mut v = sink;
        while v != src {
            let e = via[v];
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while v != src {
            let e = via[v];
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            v = edges[e ^ 1].to;
        }
        flow += push;
        result += push * d[sink];
    }
    result
}
