//! ℓ1-regularised least squares `min ½‖Ac − w‖² + Σ λ_k |c_k|`.
//!
//! Everything runs on the Gram form `½cᵀQc − bᵀc + ½y` so that the same
//! solver serves a sampled operator (`Q = AᵀA`, `b = Aᵀw`) and the
//! noiseless continuum setting (`Q_kl = H(x_k − x_l)`, `b_k = Σγ H(x_k − ξ)`).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{GroundTruth, ObservationSet, OperatorMatrix};
use crate::kernels::{AutoKernel, Kernel};
use crate::mesh::Mesh;

/// Quadratic data term `½cᵀQc − bᵀc + ½y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `‖w‖²`, or `‖G∗μ‖²` in the continuum setting.
    pub yy: f64,
}

impl Gram {
    pub fn from_operator(a: &OperatorMatrix, w: &[f64]) -> Result<Self> {
        if w.len() != a.rows() {
            return Err(Error::LengthMismatch {
                expected: a.rows(),
                got: w.len(),
            });
        }
        let wv = DVector::from_column_slice(w);
        Ok(Gram {
            q: a.matrix.tr_mul(&a.matrix),
            b: a.matrix.tr_mul(&wv),
            yy: wv.norm_squared(),
        })
    }

    /// Continuum data term for noiseless `f = G∗μ`; `nodes` is a flat
    /// coordinate buffer.
    pub fn continuum(auto: &AutoKernel, nodes: &[f64], truth: &GroundTruth) -> Result<Self> {
        let d = auto.dim();
        if !nodes.len().is_multiple_of(d) || truth.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: truth.dim(),
            });
        }
        let n = nodes.len() / d;
        let node = |k: usize| &nodes[k * d..(k + 1) * d];
        let mut q = vec![0.0; n * n];
        q.par_chunks_mut(n.max(1)).enumerate().for_each(|(l, col)| {
            for (k, v) in col.iter_mut().enumerate() {
                *v = auto.between(node(k), node(l));
            }
        });
        let b: Vec<f64> = (0..n)
            .map(|k| truth.peaks.iter().map(|p| p.amplitude * auto.between(node(k), &p.location)).sum())
            .collect();
        let yy = truth
            .peaks
            .iter()
            .flat_map(|p| truth.peaks.iter().map(move |r| p.amplitude * r.amplitude * auto.between(&p.location, &r.location)))
            .sum();
        Ok(Gram {
            q: DMatrix::from_vec(n, n, q),
            b: DVector::from_vec(b),
            yy,
        })
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// `‖b‖_∞ = ‖Aᵀw‖_∞`.
    pub fn lambda_max(&self) -> f64 {
        self.b.amax()
    }

    /// `g = b − Qc = Aᵀ(w − Ac)`.
    pub fn gradient(&self, c: &[f64]) -> Vec<f64> {
        let mut g = self.b.as_slice().to_vec();
        for (k, &ck) in c.iter().enumerate() {
            if ck != 0.0 {
                for (gi, qi) in g.iter_mut().zip(self.column(k)) {
                    *gi -= qi * ck;
                }
            }
        }
        g
    }

    /// `½‖w − Ac‖²` from the gradient identity.
    fn half_residual(&self, c: &[f64], g: &[f64]) -> f64 {
        let cb: f64 = c.iter().zip(self.b.iter()).map(|(a, b)| a * b).sum();
        let cg: f64 = c.iter().zip(g).map(|(a, b)| a * b).sum();
        (0.5 * (self.yy - cb - cg)).max(0.0)
    }

    #[inline]
    fn column(&self, k: usize) -> &[f64] {
        let n = self.len();
        &self.q.as_slice()[k * n..(k + 1) * n]
    }
}

/// The data side of a problem: sampled observations or the noiseless
/// continuum `f = G∗μ`.
#[derive(Debug, Clone)]
pub enum DataTerm {
    Sampled { obs: ObservationSet, kernel: Kernel },
    Continuum { truth: GroundTruth, kernel: Kernel },
}

impl DataTerm {
    pub fn kernel(&self) -> &Kernel {
        match self {
            DataTerm::Sampled { kernel, .. } | DataTerm::Continuum { kernel, .. } => kernel,
        }
    }

    pub fn dim(&self) -> usize {
        self.kernel().dim()
    }

    /// Gram form on the nodes of `mesh`.
    pub fn gram(&self, mesh: &Mesh) -> Result<Gram> {
        if mesh.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: mesh.dim(),
            });
        }
        match self {
            DataTerm::Sampled { obs, kernel } => {
                let a = OperatorMatrix::assemble(kernel, mesh.coords(), &obs.points)?;
                Gram::from_operator(&a, &obs.values)
            }
            DataTerm::Continuum { truth, kernel } => Gram::continuum(&kernel.autocorrelation(), mesh.coords(), truth),
        }
    }

    /// Autocorrelation consistent with [`DataTerm::gram`]: sampled Gram
    /// entries approximate `ρ·H` for measurement density `ρ`.
    pub fn recovery_kernel(&self) -> AutoKernel {
        match self {
            DataTerm::Sampled { obs, kernel } => kernel.autocorrelation().scaled(obs.density()),
            DataTerm::Continuum { kernel, .. } => kernel.autocorrelation(),
        }
    }
}

/// `‖Aᵀw‖_∞`.
pub fn lambda_max(a: &OperatorMatrix, w: &[f64]) -> Result<f64> {
    Ok(a.apply_transpose(w)?.iter().fold(0.0, |m, v| m.max(v.abs())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    CoordinateDescent,
    Fista,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "snake_case")]
pub struct SolverOptions {
    /// Scaled KKT tolerance.
    pub tol: f64,
    /// Sweeps (coordinate descent) or iterations (FISTA).
    pub max_iter: usize,
    pub nonneg: bool,
    pub algorithm: Algorithm,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 100_000,
            nonneg: false,
            algorithm: Algorithm::CoordinateDescent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SparseSolution {
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    /// Per-coefficient penalties actually used (all `lambda` for plain LASSO).
    pub weights: Vec<f64>,
    pub tol: f64,
    pub iterations: usize,
    /// `max_k` KKT violation divided by `lambda`.
    pub kkt_residual: f64,
    /// Duality gap relative to the primal objective.
    pub duality_gap: f64,
    pub objective: f64,
    pub mesh_generation: usize,
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl SparseSolution {
    pub fn support(&self) -> Vec<usize> {
        (0..self.coefficients.len()).filter(|&k| self.coefficients[k] != 0.0).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.coefficients.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn with_generation(mut self, generation: usize) -> Self {
        self.mesh_generation = generation;
        self
    }
}

pub fn solve_lasso(gram: &Gram, lambda: f64, opts: &SolverOptions, warm: Option<&[f64]>) -> Result<SparseSolution> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    solve_weighted(gram, lambda, &vec![lambda; gram.len()], opts, warm)
}

/// Iteratively reweighted ℓ1. Round 0 is plain LASSO; later rounds use
/// `λ_k = λ·ε/(|c_k| + ε)` with `ε = 1e-4·max|c|` from round 0.
pub fn solve_hal(gram: &Gram, lambda: f64, rounds: usize, opts: &SolverOptions, warm: Option<&[f64]>) -> Result<SparseSolution> {
    solve_hal_with(gram, lambda, rounds, HAL_EPSILON, opts, warm)
}

/// Default `ε/max|c⁽⁰⁾|` for [`solve_hal`].
pub const HAL_EPSILON: f64 = 1e-4;

/// [`solve_hal`] with `ε = epsilon·max|c⁽⁰⁾|`.
pub fn solve_hal_with(gram: &Gram, lambda: f64, rounds: usize, epsilon: f64, opts: &SolverOptions, warm: Option<&[f64]>) -> Result<SparseSolution> {
    if rounds == 0 {
        return Err(Error::invalid("HAL needs at least one round"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("HAL epsilon must be positive"));
    }
    let mut sol = solve_lasso(gram, lambda, opts, warm)?;
    let eps = epsilon * sol.max_abs();
    if eps == 0.0 {
        return Ok(sol);
    }
    let mut iterations = sol.iterations;
    for _ in 1..rounds {
        let weights: Vec<f64> = sol.coefficients.iter().map(|c| lambda * eps / (c.abs() + eps)).collect();
        sol = solve_weighted(gram, lambda, &weights, opts, Some(&sol.coefficients.clone()))?;
        iterations += sol.iterations;
    }
    sol.iterations = iterations;
    Ok(sol)
}

/// Weighted LASSO with per-coefficient penalties `weights`; `lambda` is the
/// scale used to normalise the KKT residual.
pub fn solve_weighted(gram: &Gram, lambda: f64, weights: &[f64], opts: &SolverOptions, warm: Option<&[f64]>) -> Result<SparseSolution> {
    let n = gram.len();
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: weights.len(),
        });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    let mut state = State::new(gram, lambda, weights, opts, warm)?;
    let converged = match opts.algorithm {
        Algorithm::CoordinateDescent => state.coordinate_descent(),
        Algorithm::Fista => state.fista(),
    };
    let sol = state.finish();
    if converged {
        Ok(sol)
    } else {
        Err(Error::NotConverged(Box::new(sol)))
    }
}

struct State<'a> {
    gram: &'a Gram,
    lambda: f64,
    weights: &'a [f64],
    opts: &'a SolverOptions,
    c: Vec<f64>,
    g: Vec<f64>,
    iterations: usize,
    history: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(gram: &'a Gram, lambda: f64, weights: &'a [f64], opts: &'a SolverOptions, warm: Option<&[f64]>) -> Result<Self> {
        let n = gram.len();
        let mut c = match warm {
            Some(w) if w.len() == n => w.to_vec(),
            Some(w) => return Err(Error::LengthMismatch { expected: n, got: w.len() }),
            None => vec![0.0; n],
        };
        if opts.nonneg {
            c.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let g = gram.gradient(&c);
        let mut state = State {
            gram,
            lambda,
            weights,
            opts,
            c,
            g,
            iterations: 0,
            history: Vec::new(),
        };
        // A poor warm start is discarded in favour of zero.
        if warm.is_some() && state.objective() > 0.5 * gram.yy {
            state.c.iter_mut().for_each(|v| *v = 0.0);
            state.g = gram.b.as_slice().to_vec();
        }
        state.history.push(state.objective());
        Ok(state)
    }

    fn objective(&self) -> f64 {
        let l1: f64 = self.c.iter().zip(self.weights).map(|(c, w)| w * c.abs()).sum();
        self.gram.half_residual(&self.c, &self.g) + l1
    }

    fn refresh(&mut self) {
        self.g = self.gram.gradient(&self.c);
    }

    fn kkt(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.c.len() {
            let (c, g, w) = (self.c[k], self.g[k], self.weights[k]);
            let v = if c > 0.0 {
                (g - w).abs()
            } else if c < 0.0 {
                (g + w).abs()
            } else if self.opts.nonneg {
                (g - w).max(0.0)
            } else {
                (g.abs() - w).max(0.0)
            };
            worst = worst.max(v);
        }
        worst / self.lambda
    }

    fn gap(&self) -> f64 {
        let primal = self.objective();
        let mut s = 1.0f64;
        for (g, w) in self.g.iter().zip(self.weights) {
            let m = if self.opts.nonneg { g.max(0.0) } else { g.abs() };
            if m > *w {
                s = s.min(w / m);
            }
        }
        let half_r2 = self.gram.half_residual(&self.c, &self.g);
        let cb: f64 = self.c.iter().zip(self.gram.b.iter()).map(|(a, b)| a * b).sum();
        let dual = s * (self.gram.yy - cb) - s * s * half_r2;
        let scale = primal.abs().max(f64::MIN_POSITIVE);
        ((primal - dual) / scale).max(0.0)
    }

    #[inline]
    fn update(&mut self, k: usize) -> bool {
        let qkk = self.gram.q[(k, k)];
        if qkk <= 0.0 {
            return false;
        }
        let ck = self.c[k];
        let z = ck + self.g[k] / qkk;
        let t = self.weights[k] / qkk;
        let new = if z > t {
            z - t
        } else if z < -t && !self.opts.nonneg {
            z + t
        } else {
            0.0
        };
        let delta = new - ck;
        if delta == 0.0 {
            return false;
        }
        self.c[k] = new;
        for (gi, qi) in self.g.iter_mut().zip(self.gram.column(k)) {
            *gi -= qi * delta;
        }
        true
    }

    fn coordinate_descent(&mut self) -> bool {
        let n = self.c.len();
        let mut polish_every = 4usize;
        if self.kkt() <= self.opts.tol {
            return true;
        }
        while self.iterations < self.opts.max_iter {
            self.iterations += 1;
            for k in 0..n {
                self.update(k);
            }
            // inner passes over the current support
            let active: Vec<usize> = (0..n).filter(|&k| self.c[k] != 0.0).collect();
            for _ in 0..10 {
                let mut moved = false;
                for &k in &active {
                    moved |= self.update(k);
                }
                if !moved {
                    break;
                }
            }
            self.refresh();
            self.history.push(self.objective());
            if self.kkt() <= self.opts.tol {
                return true;
            }
            if self.iterations.is_multiple_of(polish_every) {
                self.polish();
                self.history.push(self.objective());
                if self.kkt() <= self.opts.tol {
                    return true;
                }
                polish_every = (polish_every * 2).min(256);
            }
        }
        false
    }

    /// Exact minimiser on the current sign pattern. Moves at most to the
    /// first sign change, so the objective never increases.
    fn polish(&mut self) {
        let support: Vec<usize> = (0..self.c.len()).filter(|&k| self.c[k] != 0.0).collect();
        if support.is_empty() {
            return;
        }
        let m = support.len();
        let qs = DMatrix::from_fn(m, m, |i, j| self.gram.q[(support[i], support[j])]);
        let rhs = DVector::from_fn(m, |i, _| {
            let k = support[i];
            self.gram.b[k] - self.weights[k] * self.c[k].signum()
        });
        let Some(chol) = qs.cholesky() else { return };
        let target = chol.solve(&rhs);
        let mut t = 1.0f64;
        let mut hit = None;
        for (i, &k) in support.iter().enumerate() {
            let (cur, new) = (self.c[k], target[i]);
            if new * cur.signum() < 0.0 || new == 0.0 {
                let ti = cur / (cur - new);
                if ti < t {
                    t = ti;
                    hit = Some(k);
                }
            }
        }
        let before = self.objective();
        let saved = self.c.clone();
        for (i, &k) in support.iter().enumerate() {
            self.c[k] += t * (target[i] - self.c[k]);
        }
        if let Some(k) = hit {
            self.c[k] = 0.0;
        }
        self.refresh();
        // a full step needs no check: it minimises the quadratic on this face
        if hit.is_some() && self.objective() > before {
            self.c = saved;
            self.refresh();
        }
    }

    fn fista(&mut self) -> bool {
        let n = self.c.len();
        let lip = largest_eigenvalue(&self.gram.q);
        if lip <= 0.0 {
            return self.kkt() <= self.opts.tol;
        }
        let mut y = self.c.clone();
        let mut prev = self.c.clone();
        let mut t = 1.0f64;
        let mut last = self.objective();
        while self.iterations < self.opts.max_iter {
            self.iterations += 1;
            if self.iterations.is_multiple_of(50) {
                self.polish();
                if self.kkt() <= self.opts.tol {
                    return true;
                }
                last = self.objective();
                prev.clone_from(&self.c);
                y.clone_from(&self.c);
                t = 1.0;
            }
            let gy = self.gram.gradient(&y);
            for k in 0..n {
                let z = y[k] + gy[k] / lip;
                let thr = self.weights[k] / lip;
                self.c[k] = if z > thr {
                    z - thr
                } else if z < -thr && !self.opts.nonneg {
                    z + thr
                } else {
                    0.0
                };
            }
            self.refresh();
            let obj = self.objective();
            // adaptive restart keeps the sequence monotone
            if obj > last {
                self.c.clone_from(&prev);
                self.refresh();
                y.clone_from(&prev);
                t = 1.0;
                continue;
            }
            self.history.push(obj);
            last = obj;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            for k in 0..n {
                y[k] = self.c[k] + beta * (self.c[k] - prev[k]);
            }
            prev.clone_from(&self.c);
            t = t_next;
            if self.kkt() <= self.opts.tol {
                return true;
            }
        }
        false
    }

    fn finish(self) -> SparseSolution {
        SparseSolution {
            kkt_residual: self.kkt(),
            duality_gap: self.gap(),
            objective: self.objective(),
            coefficients: self.c,
            lambda: self.lambda,
            weights: self.weights.to_vec(),
            tol: self.opts.tol,
            iterations: self.iterations,
            mesh_generation: 0,
            history: self.history,
        }
    }
}

fn largest_eigenvalue(q: &DMatrix<f64>) -> f64 {
    let n = q.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..500 {
        let w = q * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (norm - est).abs() <= 1e-12 * norm {
            est = norm;
            break;
        }
        est = norm;
    }
    est * 1.01
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Gram {
        let a = OperatorMatrix {
            matrix: DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, 1.0, 0.1, 0.3]),
        };
        Gram::from_operator(&a, &[1.0, 0.8, -0.2]).unwrap()
    }

    #[test]
    fn above_lambda_max_is_zero() {
        let g = toy();
        let s = solve_lasso(&g, 1.001 * g.lambda_max(), &SolverOptions::default(), None).unwrap();
        assert!(s.coefficients.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn below_lambda_max_is_nonzero() {
        let g = toy();
        let s = solve_lasso(&g, 0.5 * g.lambda_max(), &SolverOptions::default(), None).unwrap();
        assert!(s.coefficients.iter().any(|&c| c != 0.0));
        assert!(s.kkt_residual <= 1e-8);
        assert!(s.duality_gap <= 1e-8);
    }

    #[test]
    fn fista_agrees_with_coordinate_descent() {
        let g = toy();
        let lam = 0.2 * g.lambda_max();
        let cd = solve_lasso(&g, lam, &SolverOptions::default(), None).unwrap();
        let opts = SolverOptions {
            algorithm: Algorithm::Fista,
            ..Default::default()
        };
        let fi = solve_lasso(&g, lam, &opts, None).unwrap();
        assert!((cd.objective - fi.objective).abs() < 1e-10);
    }

    #[test]
    fn single_round_hal_is_lasso() {
        let g = toy();
        let lam = 0.3 * g.lambda_max();
        let a = solve_lasso(&g, lam, &SolverOptions::default(), None).unwrap();
        let b = solve_hal(&g, lam, 1, &SolverOptions::default(), None).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
    }

    #[test]
    fn nonneg_respects_sign() {
        let g = toy();
        let opts = SolverOptions {
            nonneg: true,
            ..Default::default()
        };
        let s = solve_lasso(&g, 0.01 * g.lambda_max(), &opts, None).unwrap();
        assert!(s.coefficients.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn exhausted_iterations_report_best_iterate() {
        let g = toy();
        let opts = SolverOptions {
            max_iter: 0,
            ..Default::default()
        };
        match solve_lasso(&g, 0.1 * g.lambda_max(), &opts, None) {
            Err(Error::NotConverged(s)) => assert_eq!(s.iterations, 0),
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }
}
