//! Sub-grid peak estimates from a cluster of same-signed coefficients, via
//! the second-order Taylor expansion of the optimality conditions.
//!
//! At every active node `x_i`, `Σ γ H(x_i − ξ) − Σ c_k H(x_i − x_k) = λ_i s`.
//! Replacing `H` by `H(0) + ½ yᵀBy` (`B = ∇²H(0)`) gives the amplitude from
//! the constant term and, after differencing node pairs, a linear system in
//! `ξ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::AutoKernel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecoveredPeak {
    pub location: Vec<f64>,
    pub amplitude: f64,
    pub cluster_id: usize,
    pub support_size: usize,
    /// `+1` or `-1`.
    pub sign: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "snake_case")]
pub struct RecoveryOptions {
    /// Add `λs/H(0)` to a single-node amplitude instead of taking `c_k`.
    pub single_node_lambda_correction: bool,
}

/// Nonzero coefficients of one cluster. `nodes` is flat with stride `dim`;
/// `lambdas[i]` is the penalty the solver applied to node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterData {
    pub dim: usize,
    pub nodes: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl ClusterData {
    pub fn new(dim: usize, nodes: Vec<f64>, coefficients: Vec<f64>, lambdas: Vec<f64>) -> Result<Self> {
        let n = coefficients.len();
        if nodes.len() != n * dim {
            return Err(Error::LengthMismatch {
                expected: n * dim,
                got: nodes.len(),
            });
        }
        if lambdas.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: lambdas.len(),
            });
        }
        Ok(ClusterData {
            dim,
            nodes,
            coefficients,
            lambdas,
        })
    }

    /// Same penalty at every node.
    pub fn uniform(dim: usize, nodes: Vec<f64>, coefficients: Vec<f64>, lambda: f64) -> Result<Self> {
        let n = coefficients.len();
        Self::new(dim, nodes, coefficients, vec![lambda; n])
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }
}

fn common_sign(coefficients: &[f64], cluster_id: usize) -> Result<f64> {
    let pos = coefficients.iter().any(|&c| c > 0.0);
    let neg = coefficients.iter().any(|&c| c < 0.0);
    match (pos, neg) {
        (true, false) => Ok(1.0),
        (false, true) => Ok(-1.0),
        (true, true) => Err(Error::SignConflict { cluster: cluster_id }),
        (false, false) => Err(Error::invalid(format!("cluster {cluster_id} has no nonzero coefficient"))),
    }
}

/// 1D closed form for one or two adjacent nodes:
/// `γ̂ = c_k + c_{k+1} + λs/H(0)`, `ξ̂ = mid + (c_{k+1} − c_k)h/(2γ̂)`.
pub fn recover_1d(data: &ClusterData, auto: &AutoKernel, cluster_id: usize, opts: RecoveryOptions) -> Result<RecoveredPeak> {
    if data.dim != 1 || auto.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: data.dim });
    }
    if data.len() > 2 || data.is_empty() {
        return Err(Error::invalid(format!("1D recovery takes one or two nodes, got {}", data.len())));
    }
    recover_nd(data, auto, cluster_id, opts)
}

/// General recovery: least squares over all node-pair differences, with a
/// fallback that minimises the same residual over the support's convex hull.
pub fn recover_nd(data: &ClusterData, auto: &AutoKernel, cluster_id: usize, opts: RecoveryOptions) -> Result<RecoveredPeak> {
    let d = data.dim;
    if auto.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: auto.dim(),
            got: d,
        });
    }
    let s = common_sign(&data.coefficients, cluster_id)?;
    let n = data.len();
    let h0 = auto.h0();
    let lambda_mean = data.lambdas.iter().sum::<f64>() / n as f64;
    let csum: f64 = data.coefficients.iter().sum();

    if n == 1 {
        let amplitude = if opts.single_node_lambda_correction {
            csum + lambda_mean * s / h0
        } else {
            csum
        };
        return Ok(RecoveredPeak {
            location: data.node(0).to_vec(),
            amplitude,
            cluster_id,
            support_size: 1,
            sign: s as i8,
        });
    }
    let gamma = csum + lambda_mean * s / h0;

    // Centre at the support centroid: keeps the system well scaled and the
    // estimate exactly translation equivariant.
    let mut centre = vec![0.0; d];
    for i in 0..n {
        for (c, x) in centre.iter_mut().zip(data.node(i)) {
            *c += x / n as f64;
        }
    }
    let pts: Vec<DVector<f64>> = (0..n)
        .map(|i| DVector::from_iterator(d, data.node(i).iter().zip(&centre).map(|(x, c)| x - c)))
        .collect();
    let b = auto.hessian_at_zero();
    let quad = |u: &DVector<f64>, v: &DVector<f64>| (u.transpose() * &b * v)[(0, 0)];
    let f = |x: &DVector<f64>| -> f64 {
        data.coefficients
            .iter()
            .zip(&pts)
            .map(|(c, xk)| {
                let y = x - xk;
                c * quad(&y, &y)
            })
            .sum()
    };

    let rows = n * (n - 1) / 2;
    let mut r = DMatrix::zeros(rows, d);
    let mut rhs = DVector::zeros(rows);
    let mut row = 0;
    for i in 0..n {
        for j in i + 1..n {
            let diff = &pts[i] - &pts[j];
            let lhs = (diff.transpose() * &b) * gamma;
            r.row_mut(row).copy_from(&lhs);
            rhs[row] = 0.5 * gamma * (quad(&pts[i], &pts[i]) - quad(&pts[j], &pts[j])) - 0.5 * (f(&pts[i]) - f(&pts[j]))
                - (data.lambdas[i] - data.lambdas[j]) * s;
            row += 1;
        }
    }

    let mut xi = None;
    if n > d {
        let svd = r.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&v| v > 1e-10 * smax).count();
        if rank == d {
            if let Ok(sol) = svd.solve(&rhs, 1e-12 * smax) {
                if in_hull(&pts, &sol, 1e-9) {
                    xi = Some(sol);
                }
            }
        }
    }
    let xi = match xi {
        Some(x) => x,
        None => minimise_over_hull(&r, &rhs, &pts),
    };
    Ok(RecoveredPeak {
        location: xi.iter().zip(&centre).map(|(x, c)| x + c).collect(),
        amplitude: gamma,
        cluster_id,
        support_size: n,
        sign: s as i8,
    })
}

/// Dispatches to the 1D closed form when it applies.
pub fn recover(data: &ClusterData, auto: &AutoKernel, cluster_id: usize, opts: RecoveryOptions) -> Result<RecoveredPeak> {
    if data.dim == 1 && data.len() <= 2 {
        recover_1d(data, auto, cluster_id, opts)
    } else {
        recover_nd(data, auto, cluster_id, opts)
    }
}

fn cost(r: &DMatrix<f64>, rhs: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (r * x - rhs).norm_squared()
}

/// Exact minimiser of `‖Rξ − rhs‖²` over the convex hull of `pts`, by
/// enumerating vertices, segments and (in 2D) triangles.
fn minimise_over_hull(r: &DMatrix<f64>, rhs: &DVector<f64>, pts: &[DVector<f64>]) -> DVector<f64> {
    let mut best = pts[0].clone();
    let mut best_cost = cost(r, rhs, &best);
    let mut consider = |x: DVector<f64>, best: &mut DVector<f64>| {
        let c = cost(r, rhs, &x);
        if c < best_cost - 1e-15 * best_cost.abs() {
            best_cost = c;
            *best = x;
        }
    };
    for p in &pts[1..] {
        consider(p.clone(), &mut best);
    }
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let e = &pts[j] - &pts[i];
            let re = r * &e;
            let den = re.norm_squared();
            if den <= 1e-300 {
                continue;
            }
            let t = -(re.dot(&(r * &pts[i] - rhs))) / den;
            if t > 0.0 && t < 1.0 {
                consider(&pts[i] + e * t, &mut best);
            }
        }
    }
    if pts[0].len() == 2 {
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                for k in j + 1..pts.len() {
                    let (e1, e2) = (&pts[j] - &pts[i], &pts[k] - &pts[i]);
                    let m = DMatrix::from_columns(&[r * &e1, r * &e2]);
                    let res = rhs - r * &pts[i];
                    let Some(st) = (m.transpose() * &m).lu().solve(&(m.transpose() * res)) else {
                        continue;
                    };
                    if st[0] > 0.0 && st[1] > 0.0 && st[0] + st[1] < 1.0 {
                        consider(&pts[i] + e1 * st[0] + e2 * st[1], &mut best);
                    }
                }
            }
        }
    }
    best
}

fn in_hull(pts: &[DVector<f64>], x: &DVector<f64>, slack: f64) -> bool {
    match x.len() {
        1 => {
            let lo = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            x[0] >= lo - slack && x[0] <= hi + slack
        }
        2 => {
            let cross = |a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>| (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    for k in j + 1..pts.len() {
                        let area = cross(&pts[i], &pts[j], &pts[k]);
                        if area.abs() <= 1e-300 {
                            continue;
                        }
                        let sg = area.signum();
                        let tri = [&pts[i], &pts[j], &pts[k]];
                        if (0..3).all(|m| sg * cross(tri[m], tri[(m + 1) % 3], x) >= -slack * area.abs().sqrt()) {
                            return true;
                        }
                    }
                }
            }
            false
        }
        _ => false,
    }
}
