//! TOML experiment configuration: one file per experiment, validated on load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{AdaptConfig, LambdaMode, SolverKind};
use crate::error::{Error, Result};
use crate::forward::{GroundTruth, ObservationSet, Peak};
use crate::kernels::{Kernel, Normalization};
use crate::mesh::{BoxDomain, Mesh};
use crate::recovery::RecoveryOptions;
use crate::solver::{Algorithm, DataTerm, SolverOptions, HAL_EPSILON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub domain: DomainSpec,
    pub kernel: KernelSpec,
    pub truth: TruthSpec,
    #[serde(default)]
    pub observation: ObservationSpec,
    #[serde(default)]
    pub mesh: MeshSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub adapt: AdaptSpec,
    #[serde(default)]
    pub scan: Option<ScanSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelVariant {
    Gaussian,
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub variant: KernelVariant,
    pub sigma: Option<f64>,
    pub alpha: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    #[serde(default = "unit_peak")]
    pub normalization: Normalization,
}

fn unit_peak() -> Normalization {
    Normalization::UnitPeak
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    #[serde(default)]
    pub peaks: Vec<Peak>,
    pub random: Option<RandomTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomTruth {
    pub count: usize,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Keep-out distance from the domain boundary.
    #[serde(default)]
    pub margin: f64,
    #[serde(default)]
    pub min_separation: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataMode {
    /// Exact `H`-Gram of the truth; no pixels, no noise.
    Continuum,
    #[default]
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationSpec {
    pub mode: DataMode,
    pub m: usize,
    /// Absent means noiseless.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for ObservationSpec {
    fn default() -> Self {
        ObservationSpec {
            mode: DataMode::Sampled,
            m: 40,
            snr_db: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSpec {
    /// Nodes per axis of the initial uniform mesh.
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub lambda_fraction: Option<f64>,
    /// Absolute λ; wins over `lambda_fraction` for fixed-grid solves.
    pub lambda: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub nonneg: bool,
    pub algorithm: Algorithm,
    /// 0 = plain LASSO.
    pub hal_rounds: usize,
    pub hal_epsilon: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let o = SolverOptions::default();
        SolverSpec {
            lambda_fraction: None,
            lambda: None,
            tol: o.tol,
            max_iter: o.max_iter,
            nonneg: o.nonneg,
            algorithm: o.algorithm,
            hal_rounds: 0,
            hal_epsilon: HAL_EPSILON,
        }
    }
}

impl SolverSpec {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            nonneg: self.nonneg,
            algorithm: self.algorithm,
        }
    }

    pub fn kind(&self) -> SolverKind {
        if self.hal_rounds == 0 {
            SolverKind::Lasso
        } else {
            SolverKind::Hal {
                rounds: self.hal_rounds,
                epsilon: self.hal_epsilon,
            }
        }
    }

    /// Absolute λ if given, else `lambda_fraction·λ_max`.
    pub fn resolve_lambda(&self, lambda_max: f64) -> Result<f64> {
        match (self.lambda, self.lambda_fraction) {
            (Some(l), _) => Ok(l),
            (None, Some(f)) => Ok(f * lambda_max),
            (None, None) => Err(Error::Config("solver needs `lambda` or `lambda_fraction`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSpec {
    pub h_min: Option<f64>,
    /// `h_min` as a multiple of the pixel width `h_M`.
    pub h_min_pixels: Option<f64>,
    pub active_threshold_fraction: f64,
    pub max_iterations: usize,
    pub lambda_mode: LambdaMode,
    pub min_measure: Option<f64>,
    pub single_node_lambda_correction: bool,
}

impl Default for AdaptSpec {
    fn default() -> Self {
        let a = AdaptConfig::default();
        AdaptSpec {
            h_min: None,
            h_min_pixels: None,
            active_threshold_fraction: a.active_threshold_fraction,
            max_iterations: a.max_iterations,
            lambda_mode: a.lambda_mode,
            min_measure: None,
            single_node_lambda_correction: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanKind {
    /// `sup r^N` against grid size.
    Residual,
    /// Nonzero count against λ.
    Lambda,
    /// Support size against the sub-grid offset of a single peak.
    Offset,
    /// Adaptive EMD and recovered count against the number of sources.
    Sources,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    pub kind: ScanKind,
    #[serde(default)]
    pub grid_sizes: Vec<usize>,
    #[serde(default)]
    pub lambda_fractions: Vec<f64>,
    /// Samples across one grid interval.
    #[serde(default = "default_offsets")]
    pub offsets: usize,
    #[serde(default)]
    pub source_counts: Vec<usize>,
    #[serde(default = "one_usize")]
    pub realizations: usize,
}

fn default_offsets() -> usize {
    50
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub directory: Option<PathBuf>,
    pub formats: Vec<Format>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            directory: None,
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

impl OutputSpec {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, so formatting and comments in the
    /// source file do not change it.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn dim(&self) -> usize {
        self.domain.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = self.dim();
        if !(d == 1 || d == 2) || self.domain.upper.len() != d {
            return bad("domain.lower/upper must both have length 1 or 2".into());
        }
        self.box_domain()?;
        self.kernel()?;
        if self.truth.peaks.is_empty() == self.truth.random.is_none() {
            return bad("truth needs exactly one of `peaks` or `random`".into());
        }
        if let Some(r) = &self.truth.random {
            if r.count == 0 || r.margin < 0.0 || r.min_separation < 0.0 {
                return bad("truth.random: count must be positive, margin and min_separation nonnegative".into());
            }
        }
        if self.observation.mode == DataMode::Sampled && self.observation.m < 2 {
            return bad(format!("observation.m must be at least 2, got {}", self.observation.m));
        }
        if let Some(s) = self.observation.snr_db {
            if s.is_nan() || s == f64::NEG_INFINITY {
                return bad(format!("observation.snr_db must be finite or +inf, got {s}"));
            }
        }
        if !self.mesh.counts.is_empty() && (self.mesh.counts.len() != d || self.mesh.counts.iter().any(|&n| n < 2)) {
            return bad(format!("mesh.counts must hold {d} entries, each at least 2"));
        }
        if let Some(f) = self.solver.lambda_fraction {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("solver.lambda_fraction must lie in (0, 1), got {f}"));
            }
        }
        if let Some(l) = self.solver.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("solver.lambda must be positive, got {l}"));
            }
        }
        if !(self.solver.tol > 0.0) {
            return bad("solver.tol must be positive".into());
        }
        if !(self.solver.hal_epsilon > 0.0) {
            return bad("solver.hal_epsilon must be positive".into());
        }
        let a = &self.adapt;
        if a.h_min.is_some() && a.h_min_pixels.is_some() {
            return bad("adapt: give `h_min` or `h_min_pixels`, not both".into());
        }
        if a.h_min.or(a.h_min_pixels).is_some_and(|h| !(h > 0.0)) {
            return bad("adapt.h_min must be positive".into());
        }
        if !(0.0..1.0).contains(&a.active_threshold_fraction) {
            return bad("adapt.active_threshold_fraction must lie in [0, 1)".into());
        }
        if a.max_iterations == 0 {
            return bad("adapt.max_iterations must be at least 1".into());
        }
        if let Some(s) = &self.scan {
            if s.lambda_fractions.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
                return bad("scan.lambda_fractions must lie in (0, 1)".into());
            }
            if s.grid_sizes.iter().any(|&n| n < 2) || s.offsets == 0 || s.realizations == 0 {
                return bad("scan: grid sizes ≥ 2, offsets and realizations ≥ 1".into());
            }
        }
        Ok(())
    }

    pub fn box_domain(&self) -> Result<BoxDomain> {
        BoxDomain::new(self.domain.lower.clone(), self.domain.upper.clone()).map_err(|e| Error::Config(format!("domain: {e}")))
    }

    pub fn kernel(&self) -> Result<Kernel> {
        let k = &self.kernel;
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("kernel.{name} is required for this variant")));
        let d = self.dim();
        let built = match k.variant {
            KernelVariant::Gaussian => Kernel::gaussian(d, need(k.sigma, "sigma")?, k.normalization),
            KernelVariant::Mixture => Kernel::mixture(d, need(k.alpha, "alpha")?, need(k.sigma1, "sigma1")?, need(k.sigma2, "sigma2")?, k.normalization),
        };
        built.map_err(|e| Error::Config(format!("kernel: {e}")))
    }

    pub fn truth(&self) -> Result<GroundTruth> {
        let dom = self.box_domain()?;
        match &self.truth.random {
            Some(r) => GroundTruth::random(&dom, r.count, r.amplitude, r.margin, r.min_separation, r.seed),
            None => GroundTruth::new(self.truth.peaks.clone(), &dom),
        }
    }

    pub fn initial_mesh(&self) -> Result<Mesh> {
        if self.mesh.counts.is_empty() {
            return Err(Error::Config("mesh.counts is required".into()));
        }
        Mesh::uniform(&self.box_domain()?, &self.mesh.counts)
    }

    pub fn observations(&self) -> Result<ObservationSet> {
        let o = &self.observation;
        ObservationSet::simulate(&self.truth()?, &self.kernel()?, &self.box_domain()?, o.m, o.snr_db.unwrap_or(f64::INFINITY), o.seed)
    }

    /// The solver's data term; sampled mode simulates the observations.
    pub fn data_term(&self) -> Result<DataTerm> {
        let kernel = self.kernel()?;
        Ok(match self.observation.mode {
            DataMode::Continuum => DataTerm::Continuum { truth: self.truth()?, kernel },
            DataMode::Sampled => DataTerm::Sampled { obs: self.observations()?, kernel },
        })
    }

    /// Pixel width `h_M` along the first axis.
    pub fn pixel_width(&self) -> f64 {
        (self.domain.upper[0] - self.domain.lower[0]) / self.observation.m as f64
    }

    pub fn adapt_config(&self) -> Result<AdaptConfig> {
        let a = &self.adapt;
        let h_min = match (a.h_min, a.h_min_pixels) {
            (Some(h), _) => h,
            (None, Some(p)) => p * self.pixel_width(),
            (None, None) => return Err(Error::Config("adapt needs `h_min` or `h_min_pixels`".into())),
        };
        let cfg = AdaptConfig {
            lambda_fraction: self
                .solver
                .lambda_fraction
                .ok_or_else(|| Error::Config("the adaptive loop needs solver.lambda_fraction".into()))?,
            h_min,
            active_threshold_fraction: a.active_threshold_fraction,
            max_iterations: a.max_iterations,
            solver: self.solver.kind(),
            solver_options: self.solver.options(),
            lambda_mode: a.lambda_mode,
            min_measure: a.min_measure,
            recovery: self.recovery_options(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn recovery_options(&self) -> RecoveryOptions {
        RecoveryOptions {
            single_node_lambda_correction: self.adapt.single_node_lambda_correction,
        }
    }

    pub fn scan(&self) -> Result<&ScanSpec> {
        self.scan.as_ref().ok_or_else(|| Error::Config("this command needs a [scan] section".into()))
    }

    /// Replaces the noise seed (and the placement seed of random truths).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.observation.seed = seed;
        if let Some(r) = &mut self.truth.random {
            r.seed = seed;
        }
        self
    }
}
