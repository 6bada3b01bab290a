//! Forward model: ground truth, measurement lattice, the dense operator
//! `A[j,k] = G(z_j - x_k)` and noisy synthetic observations.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::mesh::{dist, BoxDomain, COINCIDENCE_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub location: Vec<f64>,
    pub amplitude: f64,
}

impl Peak {
    pub fn new(location: impl Into<Vec<f64>>, amplitude: f64) -> Self {
        Peak {
            location: location.into(),
            amplitude,
        }
    }
}

/// `μ = Σ γ_l δ_{ξ_l}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub peaks: Vec<Peak>,
}

impl GroundTruth {
    pub fn new(peaks: Vec<Peak>, domain: &BoxDomain) -> Result<Self> {
        if peaks.is_empty() {
            return Err(Error::invalid("ground truth needs at least one peak"));
        }
        for (i, p) in peaks.iter().enumerate() {
            if !domain.contains(&p.location) {
                return Err(Error::invalid(format!("peak {i} at {:?} lies outside the domain", p.location)));
            }
            if !p.amplitude.is_finite() {
                return Err(Error::invalid(format!("peak {i} has a non-finite amplitude")));
            }
            if peaks[..i].iter().any(|q| dist(&q.location, &p.location) <= COINCIDENCE_TOL) {
                return Err(Error::invalid(format!("peak {i} coincides with an earlier peak")));
            }
        }
        Ok(GroundTruth { peaks })
    }

    /// `count` peaks of equal amplitude, uniform in the domain shrunk by
    /// `margin`, rejection-sampled to keep pairwise distance `≥ min_sep`.
    pub fn random(domain: &BoxDomain, count: usize, amplitude: f64, margin: f64, min_sep: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut peaks: Vec<Peak> = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while peaks.len() < count {
            attempts += 1;
            if attempts > 1000 * count.max(1) {
                return Err(Error::invalid(format!("could not place {count} peaks with separation {min_sep}")));
            }
            let x: Vec<f64> = (0..domain.dim())
                .map(|i| rng.random_range(domain.lower[i] + margin..domain.upper[i] - margin))
                .collect();
            if peaks.iter().all(|p| dist(&p.location, &x) >= min_sep.max(COINCIDENCE_TOL * 2.0)) {
                peaks.push(Peak::new(x, amplitude));
            }
        }
        GroundTruth::new(peaks, domain)
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    /// `‖μ‖_TV = Σ|γ_l|`.
    pub fn total_variation(&self) -> f64 {
        self.peaks.iter().map(|p| p.amplitude.abs()).sum()
    }

    pub fn dim(&self) -> usize {
        self.peaks.first().map_or(0, |p| p.location.len())
    }
}

/// Pixel centres `lower + (j + ½)·(upper - lower)/M` per axis, axis 0 fastest.
pub fn measurement_points(domain: &BoxDomain, m: usize) -> Vec<f64> {
    let dim = domain.dim();
    let axis = |a: usize, j: usize| domain.lower[a] + (j as f64 + 0.5) * (domain.upper[a] - domain.lower[a]) / m as f64;
    let total = m.pow(dim as u32);
    let mut pts = Vec::with_capacity(total * dim);
    for flat in 0..total {
        let mut rest = flat;
        for a in 0..dim {
            pts.push(axis(a, rest % m));
            rest /= m;
        }
    }
    pts
}

/// Dense operator `A[j,k] = G(z_j - x_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub matrix: DMatrix<f64>,
}

impl OperatorMatrix {
    /// `points` and `nodes` are flat coordinate buffers of the kernel's dimension.
    pub fn assemble(kernel: &Kernel, nodes: &[f64], points: &[f64]) -> Result<Self> {
        let d = kernel.dim();
        if !nodes.len().is_multiple_of(d) || !points.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if !nodes.len().is_multiple_of(d) { nodes.len() % d } else { points.len() % d },
            });
        }
        let (rows, cols) = (points.len() / d, nodes.len() / d);
        let mut data = vec![0.0; rows * cols];
        data.par_chunks_mut(rows.max(1)).enumerate().for_each(|(k, col)| {
            let x = &nodes[k * d..(k + 1) * d];
            for (j, out) in col.iter_mut().enumerate() {
                let z = &points[j * d..(j + 1) * d];
                let r2: f64 = z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                *out = kernel.eval_sq(r2);
            }
        });
        Ok(OperatorMatrix {
            matrix: DMatrix::from_vec(rows, cols, data),
        })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.cols() {
            return Err(Error::LengthMismatch {
                expected: self.cols(),
                got: c.len(),
            });
        }
        Ok((&self.matrix * DVector::from_column_slice(c)).data.into())
    }

    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows() {
            return Err(Error::LengthMismatch {
                expected: self.rows(),
                got: v.len(),
            });
        }
        Ok(self.matrix.tr_mul(&DVector::from_column_slice(v)).data.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NoiseInfo {
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub seed: u64,
    /// `sc` in `ε = sc·ε̄`.
    pub scale: f64,
}

/// Samples `w_j` at pixel centres `z_j`, with the noise that was added.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub domain: BoxDomain,
    pub m: usize,
    pub points: Vec<f64>,
    pub values: Vec<f64>,
    pub noise: Vec<f64>,
    pub info: NoiseInfo,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Sidecar {
    #[serde(rename = "M")]
    m: usize,
    domain: BoxDomain,
    snr_db: Option<f64>,
    seed: u64,
    scale: f64,
    dimension: usize,
}

impl ObservationSet {
    /// Noiseless samples plus `sc·ε̄`, `ε̄ ~ N(0,1)` from ChaCha8 seeded with
    /// `seed`; `sc` makes the SNR exactly `snr_db`.
    pub fn simulate(truth: &GroundTruth, kernel: &Kernel, domain: &BoxDomain, m: usize, snr_db: f64, seed: u64) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid("observation grid needs M ≥ 2"));
        }
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid(format!("snr_db must be finite or +inf, got {snr_db}")));
        }
        if truth.dim() != kernel.dim() || domain.dim() != kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: kernel.dim(),
                got: truth.dim(),
            });
        }
        let d = kernel.dim();
        let points = measurement_points(domain, m);
        let clean: Vec<f64> = points
            .par_chunks(d)
            .map(|z| truth.peaks.iter().map(|p| p.amplitude * kernel.eval_sq(crate::mesh::dist2(z, &p.location))).sum())
            .collect();
        let (noise, scale) = if snr_db.is_infinite() {
            (vec![0.0; clean.len()], 0.0)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..clean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let ps: f64 = clean.iter().map(|v| v * v).sum();
            let pn: f64 = raw.iter().map(|v| v * v).sum();
            let sc = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
            (raw.into_iter().map(|e| sc * e).collect(), sc)
        };
        let values = clean.iter().zip(&noise).map(|(a, b)| a + b).collect();
        Ok(ObservationSet {
            domain: domain.clone(),
            m,
            points,
            values,
            noise,
            info: NoiseInfo { snr_db, seed, scale },
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn clean(&self) -> Vec<f64> {
        self.values.iter().zip(&self.noise).map(|(w, e)| w - e).collect()
    }

    /// SNR recomputed from the stored signal and noise.
    pub fn achieved_snr_db(&self) -> f64 {
        let ps: f64 = self.clean().iter().map(|v| v * v).sum();
        let pn: f64 = self.noise.iter().map(|v| v * v).sum();
        10.0 * (ps / pn).log10()
    }

    /// Measurement density per unit volume, `M^d / |domain|`.
    pub fn density(&self) -> f64 {
        let vol: f64 = self.domain.lower.iter().zip(&self.domain.upper).map(|(a, b)| b - a).product();
        self.len() as f64 / vol
    }

    /// `j1,(j2,)z1,(z2,)w` rows.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::from(if d == 1 { "j1,z1,w\n" } else { "j1,j2,z1,z2,w\n" });
        for (flat, (z, w)) in self.points.chunks(d).zip(&self.values).enumerate() {
            if d == 1 {
                out += &format!("{},{:e},{:e}\n", flat, z[0], w);
            } else {
                out += &format!("{},{},{:e},{:e},{:e}\n", flat % self.m, flat / self.m, z[0], z[1], w);
            }
        }
        out
    }

    /// Raw little-endian f64 values (`j2` rows of `j1` columns) plus a JSON sidecar.
    pub fn write_binary(&self, bin: &Path, sidecar: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(bin, bytes).map_err(|e| Error::io(bin, e))?;
        let meta = Sidecar {
            m: self.m,
            domain: self.domain.clone(),
            snr_db: self.info.snr_db.is_finite().then_some(self.info.snr_db),
            seed: self.info.seed,
            scale: self.info.scale,
            dimension: self.dim(),
        };
        fs::write(sidecar, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(sidecar, e))
    }

    /// Inverse of [`ObservationSet::write_binary`]. The noise split is not
    /// stored, so `noise` comes back as zeros.
    pub fn read_binary(bin: &Path, sidecar: &Path) -> Result<Self> {
        let meta: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?)?;
        let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
        let expected = meta.m.pow(meta.dimension as u32);
        if bytes.len() != 8 * expected {
            return Err(Error::LengthMismatch {
                expected: 8 * expected,
                got: bytes.len(),
            });
        }
        let values: Vec<f64> = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(ObservationSet {
            points: measurement_points(&meta.domain, meta.m),
            noise: vec![0.0; values.len()],
            values,
            domain: meta.domain,
            m: meta.m,
            info: NoiseInfo {
                snr_db: meta.snr_db.unwrap_or(f64::INFINITY),
                seed: meta.seed,
                scale: meta.scale,
            },
        })
    }
}
