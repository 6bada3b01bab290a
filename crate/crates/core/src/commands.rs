//! The four pipelines behind the `peakforge` subcommands. Each writes its
//! artifacts plus `manifest.json` under one output directory and reports
//! whether every solve converged.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{recover_clusters, run_adaptive_with, AdaptTrace};
use crate::config::{ExperimentConfig, Format, ScanKind};
use crate::diagnostics::{default_density, dense_samples, samples_csv, sup_r_scan, OptimalityField, ScanPoint};
use crate::error::{Error, Result};
use crate::forward::{GroundTruth, ObservationSet, Peak};
use crate::io::{peaks_csv, solution_csv, ArtifactWriter, Manifest};
use crate::mesh::{BoxDomain, Mesh};
use crate::metrics::{compare, Comparison, MassMode};
use crate::recovery::RecoveredPeak;
use crate::solver::{DataTerm, Gram, SparseSolution};

#[derive(Debug, Clone)]
pub struct Outcome {
    pub converged: bool,
    pub manifest: Manifest,
    pub summary: String,
}

fn write_peaks(w: &mut ArtifactWriter, cfg: &ExperimentConfig, stem: &str, peaks: &[RecoveredPeak]) -> Result<()> {
    if cfg.output.wants(Format::Csv) {
        w.write(&format!("{stem}.csv"), peaks_csv(peaks, cfg.dim()))?;
    }
    if cfg.output.wants(Format::Json) {
        w.write_json(&format!("{stem}.json"), &peaks)?;
    }
    Ok(())
}

fn write_table<T: Serialize>(w: &mut ArtifactWriter, cfg: &ExperimentConfig, stem: &str, header: &str, rows: &[T], csv_row: impl Fn(&T) -> String) -> Result<()> {
    if cfg.output.wants(Format::Csv) {
        let mut text = format!("{header}\n");
        rows.iter().for_each(|r| {
            text += &csv_row(r);
            text.push('\n');
        });
        w.write(&format!("{stem}.csv"), text)?;
    }
    if cfg.output.wants(Format::Json) {
        w.write_json(&format!("{stem}.json"), &rows)?;
    }
    Ok(())
}

fn data_term(cfg: &ExperimentConfig, obs: Option<ObservationSet>) -> Result<DataTerm> {
    match obs {
        Some(obs) => {
            if obs.dim() != cfg.dim() {
                return Err(Error::DimensionMismatch {
                    expected: cfg.dim(),
                    got: obs.dim(),
                });
            }
            Ok(DataTerm::Sampled { obs, kernel: cfg.kernel()? })
        }
        None => cfg.data_term(),
    }
}

/// Writes the observation CSV, raw binary and sidecar, and the truth used.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let obs = cfg.observations()?;
    let mut w = ArtifactWriter::create(out)?;
    if cfg.output.wants(Format::Csv) {
        w.write("observations.csv", obs.to_csv())?;
    }
    obs.write_binary(&out.join("observations.bin"), &out.join("observations.json"))?;
    w.adopt("observations.bin")?;
    w.adopt("observations.json")?;
    w.write_json("truth.json", &cfg.truth()?)?;
    let snr = obs.achieved_snr_db();
    let manifest = w.finish("simulate", &cfg.name, &cfg.hash(), true, None)?;
    Ok(Outcome {
        converged: true,
        manifest,
        summary: format!("{} samples on a {}^{} grid, achieved SNR {snr:.3} dB", obs.len(), obs.m, obs.dim()),
    })
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub outcome: Outcome,
    pub mesh: Mesh,
    pub solution: SparseSolution,
    pub peaks: Vec<RecoveredPeak>,
    pub metrics: Comparison,
}

/// One solve on the initial mesh, no refinement. A solver that runs out of
/// iterations still leaves its best iterate on disk, flagged in the manifest.
pub fn solve(cfg: &ExperimentConfig, obs: Option<ObservationSet>, out: &Path) -> Result<SolveResult> {
    let data = data_term(cfg, obs)?;
    let mesh = cfg.initial_mesh()?;
    let gram = data.gram(&mesh)?;
    let lmax = gram.lambda_max();
    let lambda = cfg.solver.resolve_lambda(lmax)?;
    if lambda >= lmax {
        log::warn!("λ = {lambda:e} is at or above λ_max = {lmax:e}: the solution is zero");
    }
    let (solution, error) = match cfg.solver.kind().solve(&gram, lambda, &cfg.solver.options(), None) {
        Ok(s) => (s, None),
        Err(Error::NotConverged(best)) => {
            log::warn!("solver stopped after {} iterations without converging", best.iterations);
            let msg = format!("not converged after {} iterations (KKT {:e})", best.iterations, best.kkt_residual);
            (*best, Some(msg))
        }
        Err(e) => return Err(e),
    };
    let auto = data.recovery_kernel();
    let peaks = recover_clusters(&mesh, &solution, &auto, cfg.adapt.active_threshold_fraction, cfg.recovery_options())?.peaks;
    if peaks.is_empty() {
        log::warn!("no peaks recovered");
    }
    let truth = cfg.truth()?;
    let metrics = compare(&truth, &peaks, MassMode::UnitNormalized);

    let mut w = ArtifactWriter::create(out)?;
    w.write("solution.csv", solution_csv(&mesh, &solution)?)?;
    w.write("mesh.json", mesh.to_json()?)?;
    write_peaks(&mut w, cfg, "peaks", &peaks)?;
    w.write_json("metrics.json", &metrics)?;
    let field = field(&data, &mesh, &solution)?;
    w.write("field.csv", samples_csv(&field, &dense_samples(&mesh, default_density(mesh.dim())))?)?;
    let converged = error.is_none();
    let manifest = w.finish("solve", &cfg.name, &cfg.hash(), converged, error)?;
    Ok(SolveResult {
        outcome: Outcome {
            converged,
            manifest,
            summary: format!(
                "λ = {lambda:.4e} ({:.4} λ_max), {} nonzeros, {} peaks, MLE {:.4} MSE {:.4} EMD {:.4}",
                lambda / lmax,
                solution.support().len(),
                peaks.len(),
                metrics.mle,
                metrics.mse,
                metrics.emd
            ),
        },
        mesh,
        solution,
        peaks,
        metrics,
    })
}

fn field(data: &DataTerm, mesh: &Mesh, sol: &SparseSolution) -> Result<OptimalityField> {
    match data {
        DataTerm::Continuum { truth, kernel } => OptimalityField::continuum(truth, &kernel.autocorrelation(), mesh, sol),
        DataTerm::Sampled { obs, kernel } => OptimalityField::sampled(obs, kernel, mesh, sol),
    }
}

#[derive(Debug, Clone)]
pub struct AdaptRun {
    pub outcome: Outcome,
    pub peaks: Vec<RecoveredPeak>,
    pub trace: AdaptTrace,
    pub metrics: Comparison,
}

/// The adaptive loop with per-iteration dumps `iter_{m}/`, then
/// `final/peaks.*`, `trace.json` and `metrics.json`.
pub fn adapt(cfg: &ExperimentConfig, obs: Option<ObservationSet>, out: &Path) -> Result<AdaptRun> {
    let data = data_term(cfg, obs)?;
    let acfg = cfg.adapt_config()?;
    let initial = cfg.initial_mesh()?;
    let mut w = ArtifactWriter::create(out)?;
    let run = run_adaptive_with(&data, &initial, &acfg, |rec, mesh, sol| {
        w.write(&rec.mesh, mesh.to_json()?)?;
        w.write(&rec.solution, solution_csv(mesh, sol)?)?;
        Ok(())
    });
    let result = match run {
        Ok(r) => r,
        Err(e) => {
            w.finish("adapt", &cfg.name, &cfg.hash(), false, Some(e.to_string()))?;
            return Err(e);
        }
    };
    write_peaks(&mut w, cfg, "final/peaks", &result.peaks)?;
    w.write("final/mesh.json", result.mesh.to_json()?)?;
    w.write_json("trace.json", &result.trace)?;
    let metrics = compare(&cfg.truth()?, &result.peaks, MassMode::UnitNormalized);
    w.write_json("metrics.json", &metrics)?;
    let converged = result.trace.converged;
    let manifest = w.finish(
        "adapt",
        &cfg.name,
        &cfg.hash(),
        converged,
        (!converged).then(|| format!("stopped at max_iterations = {}", acfg.max_iterations)),
    )?;
    Ok(AdaptRun {
        outcome: Outcome {
            converged,
            manifest,
            summary: format!(
                "{} iterations, {} peaks, MLE {:.4} MSE {:.4} EMD {:.4}",
                result.trace.iterations.len(),
                result.peaks.len(),
                metrics.mle,
                metrics.mse,
                metrics.emd
            ),
        },
        peaks: result.peaks,
        trace: result.trace,
        metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LambdaPoint {
    pub fraction: f64,
    pub lambda: f64,
    pub nonzeros: usize,
    /// Above the active threshold.
    pub active: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OffsetPoint {
    /// `ξ − x_K`.
    pub offset: f64,
    pub offset_over_h: f64,
    pub support_size: usize,
    /// 1 below `λh/(2γH(0))`, 2 above.
    pub predicted: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SourcesPoint {
    pub count: usize,
    pub realization: usize,
    pub seed: u64,
    pub recovered: usize,
    pub emd: f64,
    pub mle: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScanRows {
    Residual(Vec<ScanPoint>),
    Lambda(Vec<LambdaPoint>),
    Offset(Vec<OffsetPoint>),
    Sources(Vec<SourcesPoint>),
}

#[derive(Debug, Clone)]
pub struct ScanRun {
    pub outcome: Outcome,
    pub rows: ScanRows,
}

pub fn scan(cfg: &ExperimentConfig, out: &Path) -> Result<ScanRun> {
    let spec = cfg.scan()?;
    let mut w = ArtifactWriter::create(out)?;
    let mut converged = true;
    let (rows, summary) = match spec.kind {
        ScanKind::Residual => {
            let frac = cfg.solver.lambda_fraction.ok_or_else(|| Error::Config("residual scan needs solver.lambda_fraction".into()))?;
            let rows = sup_r_scan(&cfg.truth()?, &cfg.kernel()?, &spec.grid_sizes, frac, &cfg.solver.options())?;
            write_table(&mut w, cfg, "scan_residual", "N,supR", &rows, |p| format!("{},{:e}", p.n, p.sup_r))?;
            let s = format!("{} grid sizes, supR {:.4e} → {:.4e}", rows.len(), rows.first().map_or(0.0, |p| p.sup_r), rows.last().map_or(0.0, |p| p.sup_r));
            (ScanRows::Residual(rows), s)
        }
        ScanKind::Lambda => {
            let rows = lambda_sweep(cfg, &spec.lambda_fractions)?;
            write_table(&mut w, cfg, "scan_lambda", "fraction,lambda,nonzeros,active", &rows, |p| {
                format!("{:e},{:e},{},{}", p.fraction, p.lambda, p.nonzeros, p.active)
            })?;
            let s = format!("{} λ values, nonzeros {:?}", rows.len(), rows.iter().map(|p| p.nonzeros).collect::<Vec<_>>());
            (ScanRows::Lambda(rows), s)
        }
        ScanKind::Offset => {
            let rows = offset_sweep(cfg, spec.offsets)?;
            write_table(&mut w, cfg, "scan_offset", "offset,offsetOverH,supportSize,predicted,threshold", &rows, |p| {
                format!("{:e},{:e},{},{},{:e}", p.offset, p.offset_over_h, p.support_size, p.predicted, p.threshold)
            })?;
            let agree = rows.iter().filter(|p| p.support_size == p.predicted).count();
            let s = format!("{agree}/{} offsets match the predicted support size", rows.len());
            (ScanRows::Offset(rows), s)
        }
        ScanKind::Sources => {
            let rows = sources_sweep(cfg, &spec.source_counts, spec.realizations)?;
            converged = rows.iter().all(|r| r.converged);
            write_table(&mut w, cfg, "scan_sources", "count,realization,seed,recovered,emd,mle,converged", &rows, |p| {
                format!("{},{},{},{},{:e},{:e},{}", p.count, p.realization, p.seed, p.recovered, p.emd, p.mle, p.converged)
            })?;
            let mut text = String::from("count,meanEmd,meanRecovered\n");
            for &n in &spec.source_counts {
                let sel: Vec<&SourcesPoint> = rows.iter().filter(|r| r.count == n).collect();
                let k = sel.len() as f64;
                text += &format!(
                    "{n},{:e},{:e}\n",
                    sel.iter().map(|r| r.emd).sum::<f64>() / k,
                    sel.iter().map(|r| r.recovered as f64).sum::<f64>() / k
                );
            }
            w.write("scan_sources_summary.csv", text)?;
            let s = format!("{} runs over {} source counts", rows.len(), spec.source_counts.len());
            (ScanRows::Sources(rows), s)
        }
    };
    let manifest = w.finish("scan", &cfg.name, &cfg.hash(), converged, None)?;
    Ok(ScanRun {
        outcome: Outcome { converged, manifest, summary },
        rows,
    })
}

/// Warm-started solves from the largest fraction down.
fn lambda_sweep(cfg: &ExperimentConfig, fractions: &[f64]) -> Result<Vec<LambdaPoint>> {
    let data = cfg.data_term()?;
    let mesh = cfg.initial_mesh()?;
    let gram = data.gram(&mesh)?;
    let lmax = gram.lambda_max();
    let mut order: Vec<f64> = fractions.to_vec();
    order.sort_by(|a, b| b.total_cmp(a));
    let mut warm: Option<Vec<f64>> = None;
    let mut rows = Vec::new();
    for f in order {
        let sol = cfg.solver.kind().solve(&gram, f * lmax, &cfg.solver.options(), warm.as_deref())?;
        let thr = cfg.adapt.active_threshold_fraction * sol.max_abs();
        rows.push(LambdaPoint {
            fraction: f,
            lambda: f * lmax,
            nonzeros: sol.support().len(),
            active: sol.coefficients.iter().filter(|c| c.abs() > thr).count(),
        });
        warm = Some(sol.coefficients);
    }
    Ok(rows)
}

/// One continuum peak moved across `(x_K, x_K + h/2)`, where `x_K` is the
/// node left of the first configured peak. λ is taken relative to `γH(0)`,
/// the on-grid `λ_max`.
fn offset_sweep(cfg: &ExperimentConfig, samples: usize) -> Result<Vec<OffsetPoint>> {
    if cfg.dim() != 1 {
        return Err(Error::Config("offset scan is one-dimensional".into()));
    }
    let mesh = cfg.initial_mesh()?;
    let first = cfg.truth()?.peaks[0].clone();
    let gamma = first.amplitude;
    if !(gamma > 0.0) {
        return Err(Error::Config("offset scan needs a positive first peak".into()));
    }
    let (lo, hi) = (cfg.domain.lower[0], cfg.domain.upper[0]);
    let h = (hi - lo) / (cfg.mesh.counts[0] - 1) as f64;
    let k = (((first.location[0] - lo) / h).floor() as usize).min(cfg.mesh.counts[0] - 2);
    let xk = mesh.node(k)[0];
    let kernel = cfg.kernel()?;
    let auto = kernel.autocorrelation();
    let lambda = cfg.solver.resolve_lambda(gamma * auto.h0())?;
    let threshold = lambda * h / (2.0 * gamma * auto.h0());
    let dom = BoxDomain::new(cfg.domain.lower.clone(), cfg.domain.upper.clone())?;
    (1..=samples)
        .into_par_iter()
        .map(|i| {
            let offset = 0.5 * h * i as f64 / (samples + 1) as f64;
            let truth = GroundTruth::new(vec![Peak::new([xk + offset], gamma)], &dom)?;
            let gram = Gram::continuum(&auto, mesh.coords(), &truth)?;
            let sol = cfg.solver.kind().solve(&gram, lambda, &cfg.solver.options(), None)?;
            let tiny = 1e-10 * gamma;
            Ok(OffsetPoint {
                offset,
                offset_over_h: offset / h,
                support_size: sol.coefficients.iter().filter(|c| c.abs() > tiny).count(),
                predicted: if offset < threshold { 1 } else { 2 },
                threshold,
            })
        })
        .collect()
}

/// Fresh random scenes per `(count, realization)`, seeded
/// `truth.random.seed + 1000·count + realization`.
fn sources_sweep(cfg: &ExperimentConfig, counts: &[usize], realizations: usize) -> Result<Vec<SourcesPoint>> {
    let base = cfg.truth.random.clone().ok_or_else(|| Error::Config("sources scan needs [truth.random]".into()))?;
    let jobs: Vec<(usize, usize)> = counts.iter().flat_map(|&n| (0..realizations).map(move |r| (n, r))).collect();
    jobs.into_par_iter()
        .map(|(n, r)| {
            let seed = base.seed + 1000 * n as u64 + r as u64;
            let mut c = cfg.clone();
            c.truth.random = Some(crate::config::RandomTruth { count: n, seed, ..base.clone() });
            c.observation.seed = seed;
            let data = c.data_term()?;
            let res = run_adaptive_with(&data, &c.initial_mesh()?, &c.adapt_config()?, |_, _, _| Ok(()))?;
            let m = compare(&c.truth()?, &res.peaks, MassMode::UnitNormalized);
            Ok(SourcesPoint {
                count: n,
                realization: r,
                seed,
                recovered: res.peaks.len(),
                emd: m.emd,
                mle: m.mle,
                converged: res.trace.converged,
            })
        })
        .collect()
}
