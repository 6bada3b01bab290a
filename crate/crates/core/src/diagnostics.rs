//! Optimality curve `p`, the clamped field `q^N`, its overshoot `r^N`, the
//! `sup|r^N|` scan over grid sizes and the a-posteriori quantities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{GroundTruth, ObservationSet, OperatorMatrix};
use crate::kernels::{AutoKernel, Kernel};
use crate::mesh::{dist2, BoxDomain, Mesh};
use crate::solver::{solve_lasso, Gram, SolverOptions, SparseSolution};

/// How `G∗f` is represented.
#[derive(Debug, Clone)]
enum Data {
    /// Noiseless `f = G∗μ`: `F(x) = Σγ H(x−ξ) − Σc H(x−x_k)`.
    Continuum { truth: GroundTruth, auto: AutoKernel },
    /// Sampled data: `F(x) = Σ_j G(z_j − x)(w − Ac)_j`.
    Sampled { kernel: Kernel, points: Vec<f64>, residual: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

/// `F(x)/λ` split into `q = clamp(F/λ, −1, 1)` and `r = F/λ − q`, with
/// `p = F/λ − 1`.
#[derive(Debug, Clone)]
pub struct OptimalityField {
    data: Data,
    dim: usize,
    nodes: Vec<f64>,
    coefficients: Vec<f64>,
    lambda: f64,
}

impl OptimalityField {
    pub fn continuum(truth: &GroundTruth, auto: &AutoKernel, mesh: &Mesh, solution: &SparseSolution) -> Result<Self> {
        check_lengths(mesh, solution)?;
        if truth.dim() != mesh.dim() || auto.dim() != mesh.dim() {
            return Err(Error::DimensionMismatch {
                expected: mesh.dim(),
                got: truth.dim(),
            });
        }
        Ok(OptimalityField {
            data: Data::Continuum {
                truth: truth.clone(),
                auto: auto.clone(),
            },
            dim: mesh.dim(),
            nodes: mesh.coords().to_vec(),
            coefficients: solution.coefficients.clone(),
            lambda: solution.lambda,
        })
    }

    /// Uses the observation samples in place of the unknown truth.
    pub fn sampled(obs: &ObservationSet, kernel: &Kernel, mesh: &Mesh, solution: &SparseSolution) -> Result<Self> {
        check_lengths(mesh, solution)?;
        let a = OperatorMatrix::assemble(kernel, mesh.coords(), &obs.points)?;
        let fit = a.apply(&solution.coefficients)?;
        let residual = obs.values.iter().zip(&fit).map(|(w, f)| w - f).collect();
        Ok(OptimalityField {
            data: Data::Sampled {
                kernel: kernel.clone(),
                points: obs.points.clone(),
                residual,
            },
            dim: mesh.dim(),
            nodes: mesh.coords().to_vec(),
            coefficients: solution.coefficients.clone(),
            lambda: solution.lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `G∗f(x) − H∗μ^N(x)`.
    pub fn correlation(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(match &self.data {
            Data::Continuum { truth, auto } => {
                let data: f64 = truth.peaks.iter().map(|p| p.amplitude * auto.between(x, &p.location)).sum();
                let model: f64 = self
                    .coefficients
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| **c != 0.0)
                    .map(|(k, c)| c * auto.between(x, &self.nodes[k * self.dim..(k + 1) * self.dim]))
                    .sum();
                data - model
            }
            Data::Sampled { kernel, points, residual } => points
                .chunks(self.dim)
                .zip(residual)
                .map(|(z, r)| r * kernel.eval_sq(dist2(z, x)))
                .sum(),
        })
    }

    pub fn sample(&self, x: &[f64]) -> Result<FieldSample> {
        let eta = self.correlation(x)? / self.lambda;
        let q = eta.clamp(-1.0, 1.0);
        Ok(FieldSample { p: eta - 1.0, q, r: eta - q })
    }

    /// Optimality curve `p(x)`.
    pub fn p(&self, x: &[f64]) -> Result<f64> {
        Ok(self.sample(x)?.p)
    }

    /// `sup |r^N|` over all nodes plus a lattice of `per_element` samples
    /// along each segment (1D) or per triangle edge (2D).
    ///
    /// The overshoot can live in a window narrower than the lattice (a peak
    /// almost on a node), so the best-separated lattice maxima of `|F/λ|`
    /// are then polished by a compass search on the smooth `|F/λ|`.
    pub fn sup_r(&self, mesh: &Mesh, per_element: usize) -> Result<f64> {
        let d = self.dim;
        let n = per_element.max(1);
        let pts = dense_samples(mesh, n);
        let eta: Result<Vec<f64>> = pts.par_chunks(d).map(|x| Ok((self.correlation(x)? / self.lambda).abs())).collect();
        let eta = eta?;
        let spacing = mesh
            .elements()
            .map(|el| {
                let mut m: f64 = 0.0;
                for (i, &a) in el.iter().enumerate() {
                    for &b in &el[i + 1..] {
                        m = m.max(dist2(mesh.node(a), mesh.node(b)).sqrt());
                    }
                }
                m
            })
            .fold(0.0, f64::max)
            / n as f64;

        let mut order: Vec<usize> = (0..eta.len()).filter(|&i| eta[i] >= 0.9).collect();
        order.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]));
        let mut starts: Vec<usize> = Vec::new();
        for i in order {
            if starts.len() == MAX_POLISH {
                break;
            }
            let x = &pts[i * d..(i + 1) * d];
            if starts.iter().all(|&j| dist2(x, &pts[j * d..(j + 1) * d]) > 4.0 * spacing * spacing) {
                starts.push(i);
            }
        }

        let (lo, hi) = bounding_box(mesh.coords(), d);
        let polished: Result<Vec<f64>> = starts
            .par_iter()
            .map(|&i| self.polish(&pts[i * d..(i + 1) * d], eta[i], spacing, &lo, &hi))
            .collect();
        let best = polished?.into_iter().chain(eta.iter().copied()).fold(0.0, f64::max);
        Ok((best - 1.0).max(0.0))
    }

    /// Compass search for a local maximum of `|F/λ|` inside the box.
    fn polish(&self, start: &[f64], value: f64, step: f64, lo: &[f64], hi: &[f64]) -> Result<f64> {
        let mut x = start.to_vec();
        let mut best = value;
        let extent = lo.iter().zip(hi).map(|(a, b)| b - a).fold(0.0, f64::max);
        let mut h = step;
        while h > 1e-12 * extent.max(1.0) {
            let mut moved = false;
            for axis in 0..self.dim {
                for dir in [1.0, -1.0] {
                    let mut y = x.clone();
                    y[axis] = (y[axis] + dir * h).clamp(lo[axis], hi[axis]);
                    let v = (self.correlation(&y)? / self.lambda).abs();
                    if v > best {
                        best = v;
                        x = y;
                        moved = true;
                    }
                }
            }
            if !moved {
                h *= 0.5;
            }
        }
        Ok(best)
    }
}

const MAX_POLISH: usize = 64;

fn bounding_box(coords: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for x in coords.chunks(d) {
        for i in 0..d {
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
        }
    }
    (lo, hi)
}

fn check_lengths(mesh: &Mesh, solution: &SparseSolution) -> Result<()> {
    if mesh.num_nodes() != solution.coefficients.len() {
        return Err(Error::LengthMismatch {
            expected: mesh.num_nodes(),
            got: solution.coefficients.len(),
        });
    }
    Ok(())
}

/// Deterministic sampling lattice: every node, plus `n` subdivisions of each
/// segment, or the barycentric lattice of order `n` on each triangle.
pub fn dense_samples(mesh: &Mesh, n: usize) -> Vec<f64> {
    let n = n.max(1);
    let mut out: Vec<f64> = mesh.coords().to_vec();
    for el in mesh.elements() {
        match mesh.dim() {
            1 => {
                let (a, b) = (mesh.node(el[0])[0], mesh.node(el[1])[0]);
                out.extend((1..n).map(|i| a + (b - a) * i as f64 / n as f64));
            }
            _ => {
                let (a, b, c) = (mesh.node(el[0]), mesh.node(el[1]), mesh.node(el[2]));
                for i in 0..=n {
                    for j in 0..=n - i {
                        let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                        let w = 1.0 - u - v;
                        out.push(w * a[0] + u * b[0] + v * c[0]);
                        out.push(w * a[1] + u * b[1] + v * c[1]);
                    }
                }
            }
        }
    }
    out
}

/// Samples per element giving at least 100 points per mesh interval.
pub fn default_density(dim: usize) -> usize {
    if dim == 1 {
        100
    } else {
        13
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScanPoint {
    #[serde(rename = "N")]
    pub n: usize,
    pub sup_r: f64,
}

/// `sup|r^N|` for uniform grids on the unit interval with `N` nodes, solving
/// the noiseless problem at `λ = lambda_fraction·λ_max(N)` each time.
pub fn sup_r_scan(truth: &GroundTruth, kernel: &Kernel, grid_sizes: &[usize], lambda_fraction: f64, opts: &SolverOptions) -> Result<Vec<ScanPoint>> {
    if truth.dim() != 1 || kernel.dim() != 1 {
        return Err(Error::invalid("the residual scan is one-dimensional"));
    }
    let auto = kernel.autocorrelation();
    grid_sizes
        .par_iter()
        .map(|&n| {
            let mesh = Mesh::uniform(&BoxDomain::unit(1), &[n])?;
            let gram = Gram::continuum(&auto, mesh.coords(), truth)?;
            let sol = solve_lasso(&gram, lambda_fraction * gram.lambda_max(), opts, None).map_err(|e| Error::Iteration {
                context: format!("scan N = {n}"),
                source: Box::new(e),
            })?;
            let field = OptimalityField::continuum(truth, &auto, &mesh, &sol)?;
            Ok(ScanPoint {
                n,
                sup_r: field.sup_r(&mesh, default_density(1))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AposterioriReport {
    pub sup_r: f64,
    /// `‖μ‖_TV` of the reference measure.
    pub tv_mass: f64,
    /// `λ·sup|r^N|·‖μ‖_TV`.
    pub bound: f64,
    /// `‖G∗(μ − μ^N)‖²`, in closed form through `H`.
    pub fidelity: f64,
    /// `λ⟨r^N, μ⟩`; equals `fidelity + λD` when `μ` is the continuum minimiser.
    pub pairing: f64,
    /// `λ(⟨q^N, μ⟩ − ‖μ^N‖_TV)`; `fidelity = this + pairing` for any `μ`.
    pub shrinkage: f64,
}

/// Both sides of the a-posteriori estimate against a reference measure
/// `μ` (ideally the continuum regularised solution, see
/// [`continuum_minimiser_single_peak`]). Requires a continuum field.
pub fn aposteriori(field: &OptimalityField, reference: &GroundTruth, mesh: &Mesh) -> Result<AposterioriReport> {
    let Data::Continuum { auto, .. } = &field.data else {
        return Err(Error::invalid("a-posteriori quantities need the continuum field"));
    };
    let d = field.dim;
    let node = |k: usize| &field.nodes[k * d..(k + 1) * d];
    let c = &field.coefficients;
    let support: Vec<usize> = (0..c.len()).filter(|&k| c[k] != 0.0).collect();
    let mut fidelity = 0.0;
    for a in &reference.peaks {
        for b in &reference.peaks {
            fidelity += a.amplitude * b.amplitude * auto.between(&a.location, &b.location);
        }
        for &k in &support {
            fidelity -= 2.0 * a.amplitude * c[k] * auto.between(&a.location, node(k));
        }
    }
    for &k in &support {
        for &l in &support {
            fidelity += c[k] * c[l] * auto.between(node(k), node(l));
        }
    }
    let sup_r = field.sup_r(mesh, default_density(d))?;
    let tv_mass = reference.total_variation();
    let mut pairing = 0.0;
    let mut qmu = 0.0;
    for p in &reference.peaks {
        let s = field.sample(&p.location)?;
        pairing += p.amplitude * s.r;
        qmu += p.amplitude * s.q;
    }
    let tv_n: f64 = c.iter().map(|v| v.abs()).sum();
    Ok(AposterioriReport {
        sup_r,
        tv_mass,
        bound: field.lambda * sup_r * tv_mass,
        fidelity: fidelity.max(0.0),
        pairing: field.lambda * pairing,
        shrinkage: field.lambda * (qmu - tv_n),
    })
}

/// For one positive peak with a Gaussian-sum `H`, the continuum problem is
/// solved by `(γ − λ/H(0))δ_ξ`.
pub fn continuum_minimiser_single_peak(truth: &GroundTruth, auto: &AutoKernel, lambda: f64) -> Result<GroundTruth> {
    match truth.peaks.as_slice() {
        [p] if p.amplitude > 0.0 => {
            let mut q = p.clone();
            q.amplitude = (p.amplitude - lambda / auto.h0()).max(0.0);
            Ok(GroundTruth { peaks: vec![q] })
        }
        _ => Err(Error::invalid("closed-form continuum minimiser needs a single positive peak")),
    }
}

/// `x,(y,)p,q,r` rows.
pub fn samples_csv(field: &OptimalityField, points: &[f64]) -> Result<String> {
    let d = field.dim;
    let mut out = String::from(if d == 1 { "x,p,q,r\n" } else { "x,y,p,q,r\n" });
    for x in points.chunks(d) {
        let s = field.sample(x)?;
        for v in x {
            out += &format!("{v:e},");
        }
        out += &format!("{:e},{:e},{:e}\n", s.p, s.q, s.r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::Peak;
    use crate::kernels::Normalization;

    fn setup(xi: f64, n: usize, frac: f64) -> (GroundTruth, AutoKernel, Mesh, SparseSolution) {
        let dom = BoxDomain::unit(1);
        let truth = GroundTruth::new(vec![Peak::new([xi], 1.0)], &dom).unwrap();
        let auto = Kernel::gaussian(1, 0.05, Normalization::UnitPeak).unwrap().autocorrelation();
        let mesh = Mesh::uniform(&dom, &[n]).unwrap();
        let gram = Gram::continuum(&auto, mesh.coords(), &truth).unwrap();
        let sol = solve_lasso(&gram, frac * gram.lambda_max(), &SolverOptions::default(), None).unwrap();
        (truth, auto, mesh, sol)
    }

    #[test]
    fn clamp_identity_and_nodes() {
        let (truth, auto, mesh, sol) = setup(0.5, 16, 0.1);
        let field = OptimalityField::continuum(&truth, &auto, &mesh, &sol).unwrap();
        for (k, x) in mesh.nodes().enumerate() {
            let s = field.sample(x).unwrap();
            let eta = field.correlation(x).unwrap() / field.lambda();
            assert!((s.q + s.r - eta).abs() < 1e-12);
            assert!(s.r.abs() < 1e-7);
            if sol.coefficients[k] != 0.0 {
                assert!(s.p.abs() < 1e-7);
            } else {
                assert!(s.p < 0.0);
            }
        }
    }

    #[test]
    fn far_field_tends_to_minus_one() {
        let (truth, auto, mesh, sol) = setup(0.1, 16, 0.1);
        let field = OptimalityField::continuum(&truth, &auto, &mesh, &sol).unwrap();
        assert!((field.p(&[0.95]).unwrap() + 1.0).abs() < 1e-6);
    }

    #[test]
    fn sup_r_is_finite_and_nonnegative() {
        let (truth, auto, mesh, sol) = setup(0.5, 16, 0.1);
        let field = OptimalityField::continuum(&truth, &auto, &mesh, &sol).unwrap();
        let s = field.sup_r(&mesh, 100).unwrap();
        assert!(s.is_finite() && s >= 0.0);
    }

    #[test]
    fn fidelity_decomposes_exactly() {
        let (truth, auto, mesh, sol) = setup(0.47, 16, 0.1);
        let field = OptimalityField::continuum(&truth, &auto, &mesh, &sol).unwrap();
        let rep = aposteriori(&field, &truth, &mesh).unwrap();
        assert!((rep.fidelity - (rep.shrinkage + rep.pairing)).abs() < 1e-9 * rep.fidelity.max(1e-12) + 1e-12);
    }
}
